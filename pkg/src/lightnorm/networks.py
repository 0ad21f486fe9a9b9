"""BN-layer dimension lists of CIFAR-style (32x32 input) networks.

Each entry is ``(name, C, H, W)`` for one batch-normalization layer in
execution order. The bundled JSON suites are generated from these builders.
"""
from __future__ import annotations

__all__ = ["NETWORKS", "bn_layers", "suite_dict"]


def _resnet50():
    layers = [("conv1", 64, 32, 32)]
    in_planes, res = 64, 32
    for stage, (planes, blocks, stride) in enumerate([(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)], 1):
        for b in range(blocks):
            s = stride if b == 0 else 1
            out_res = res // s
            tag = f"layer{stage}.{b}"
            layers.append((f"{tag}.bn1", planes, res, res))
            layers.append((f"{tag}.bn2", planes, out_res, out_res))
            layers.append((f"{tag}.bn3", 4 * planes, out_res, out_res))
            if s != 1 or in_planes != 4 * planes:
                layers.append((f"{tag}.shortcut", 4 * planes, out_res, out_res))
            in_planes, res = 4 * planes, out_res
    return layers


def _mobilenet_v1():
    layers = [("conv1", 32, 32, 32)]
    cfg = [64, (128, 2), 128, (256, 2), 256, (512, 2), 512, 512, 512, 512, 512, (1024, 2), 1024]
    in_planes, res = 32, 32
    for i, item in enumerate(cfg):
        out, stride = (item, 1) if isinstance(item, int) else item
        out_res = res // stride
        layers.append((f"block{i}.dw", in_planes, out_res, out_res))
        layers.append((f"block{i}.pw", out, out_res, out_res))
        in_planes, res = out, out_res
    return layers


def _mobilenet_v2():
    layers = [("conv1", 32, 32, 32)]
    cfg = [(1, 16, 1, 1), (6, 24, 2, 1), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    in_planes, res = 32, 32
    idx = 0
    for t, out, n, stride in cfg:
        for j in range(n):
            s = stride if j == 0 else 1
            planes = t * in_planes
            out_res = res // s
            layers.append((f"block{idx}.expand", planes, res, res))
            layers.append((f"block{idx}.dw", planes, out_res, out_res))
            layers.append((f"block{idx}.project", out, out_res, out_res))
            if s == 1 and in_planes != out:
                layers.append((f"block{idx}.shortcut", out, out_res, out_res))
            in_planes, res = out, out_res
            idx += 1
    layers.append(("conv2", 1280, res, res))
    return layers


def _densenet121(growth=32, reduction=0.5):
    blocks = (6, 12, 24, 16)
    planes = 2 * growth
    res = 32
    layers = []
    for bi, n in enumerate(blocks):
        for j in range(n):
            layers.append((f"dense{bi + 1}.{j}.bn1", planes, res, res))
            layers.append((f"dense{bi + 1}.{j}.bn2", 4 * growth, res, res))
            planes += growth
        if bi < len(blocks) - 1:
            layers.append((f"trans{bi + 1}.bn", planes, res, res))
            planes = int(planes * reduction)
            res //= 2
    layers.append(("bn", planes, res, res))
    return layers


NETWORKS = {
    "resnet50": _resnet50,
    "mobilenetv1": _mobilenet_v1,
    "mobilenetv2": _mobilenet_v2,
    "densenet121": _densenet121,
}


def bn_layers(network: str) -> list[tuple[str, int, int, int]]:
    try:
        return NETWORKS[network]()
    except KeyError:
        raise ValueError(f"unknown network {network!r}; known: {sorted(NETWORKS)}") from None


def suite_dict(network: str, batch: int = 256) -> dict:
    return {
        "network": network,
        "input": [32, 32],
        "batch": batch,
        "layers": [{"name": n, "B": batch, "C": c, "H": h, "W": w} for n, c, h, w in bn_layers(network)],
    }
