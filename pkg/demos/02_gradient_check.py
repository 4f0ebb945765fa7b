"""Finite-difference check of every elementary op and of each module of the end-to-end model."""
from tcan.diagnostics import MODEL_TOLERANCE, OP_TOLERANCE, model_gradcheck, op_gradcheck
from tcan.model import ModelConfig

ops = op_gradcheck(0)
for name, err in sorted(ops.items(), key=lambda kv: -kv[1]):
    print(f"op {name:16s} {err:.2e}")
print(f"worst op error must stay below {OP_TOLERANCE:g}")
for variant in ("full", "NT", "RNN"):
    errs = model_gradcheck(ModelConfig(variant=variant))
    print(variant, {k: f"{v:.1e}" for k, v in errs.items()}, f"(limit {MODEL_TOLERANCE:g})")
