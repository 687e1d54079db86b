"""Train a small MLP densely, then prune it to 50% with three schedules."""
from nmgsparse.train import DemoConfig, run_demo

res = run_demo(DemoConfig())
print(f"dense reference held-out loss {res.dense_final_loss:.4f}")
for name, log in res.logs.items():
    sp = res.models[name].weight_sparsity()
    print(f"{name:<11} loss {log.final_loss:.4f}  events {len(log.events)}  "
          + "  ".join(f"{k}={v:.2f}" for k, v in sp.items()))
