"""
Toy training with LightNorm
===========================

A small MLP on overlapping Gaussian clusters, trained with FP64 batch
normalization and with LightNorm at several group sizes. The acceptance
suite runs the full 5-seed, 50-epoch version; this one is shorter.
"""
from lightnorm.minifloat import FP10A, FP10B, FP64
from lightnorm.norm import NormConfig
from lightnorm.toytrain import ToyModel, make_dataset, train, train_linear

data = make_dataset("gaussian-clusters", n=2000, seed=0)
print("linear baseline test accuracy", train_linear(data))

ln = NormConfig.lightnorm().with_(rn_grad="exact")
configs = {
    "FP64 BN": NormConfig(fw_format=FP64, bw_format=FP64),
    "LightNorm k=4": ln,
    "LightNorm k=16": ln.with_(group_size=16),
    "FW FP10-B / BW FP10-A": ln.with_(fw_format=FP10B, bw_format=FP10A),
    "printed RN gradient": ln.with_(rn_grad="literal"),
}
for name, cfg in configs.items():
    model = ToyModel.init(data.n_features, data.n_classes, cfg, seed=0)
    run = train(model, data, cfg, epochs=20, seed=0)
    print(f"{name:<24} test acc {run.final_test_acc:.3f}  loss {run.final_loss:.3f}")
