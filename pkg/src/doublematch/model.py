"""Network bundle: backbone f, prediction head g, projection head h.

f maps an image batch to penultimate features (n, d); g is a single linear
layer producing class logits; h is a single dimension-preserving linear
layer used only by the self-supervised loss on the strong branch.

Trainable parameters are partitioned into disjoint groups (theta_f, theta_g,
theta_h). BatchNorm running statistics are state, not parameters: they are
excluded from the partition and from weight decay.
"""

import copy
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class WideResnetBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False)

    def forward(self, x):
        out = F.relu(self.bn1(x))
        short = x if self.shortcut is None else self.shortcut(out)
        out = self.conv2(F.relu(self.bn2(self.conv1(out))))
        return out + short


class WideResnet(nn.Module):
    """Pre-activation wide residual network with global average pooling."""

    def __init__(self, blocks_per_group, width, num_groups=3):
        super().__init__()
        channels = [16] + [16 * width * (2 ** i) for i in range(num_groups)]
        self.conv0 = nn.Conv2d(3, channels[0], 3, padding=1, bias=False)
        groups = []
        for g in range(num_groups):
            stride = 1 if g == 0 else 2
            layers = [WideResnetBlock(channels[g], channels[g + 1], stride)]
            layers += [WideResnetBlock(channels[g + 1], channels[g + 1], 1)
                       for _ in range(blocks_per_group - 1)]
            groups.append(nn.Sequential(*layers))
        self.groups = nn.Sequential(*groups)
        self.bn_out = nn.BatchNorm2d(channels[-1])
        self.feature_dim = channels[-1]

    def forward(self, x):
        out = self.groups(self.conv0(x))
        out = F.relu(self.bn_out(out))
        return F.adaptive_avg_pool2d(out, 1).flatten(1)


class DeskCnn(nn.Module):
    """Small 4-conv backbone for CPU-scale smoke runs and tests."""

    def __init__(self, feature_dim=64, channels=(16, 32, 32)):
        super().__init__()
        layers = []
        in_ch = 3
        for out_ch in channels:
            layers += [nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
                       nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True), nn.MaxPool2d(2)]
            in_ch = out_ch
        layers += [nn.Conv2d(in_ch, feature_dim, 3, padding=1, bias=False),
                   nn.BatchNorm2d(feature_dim), nn.ReLU(inplace=True)]
        self.body = nn.Sequential(*layers)
        self.feature_dim = feature_dim

    def forward(self, x):
        return F.adaptive_avg_pool2d(self.body(x), 1).flatten(1)


@dataclass
class ModelBundle:
    backbone: nn.Module
    head_g: nn.Linear
    head_h: nn.Linear
    feature_dim: int
    num_classes: int

    def param_groups(self):
        """Disjoint trainable-parameter partition {f, g, h}."""
        return {
            "f": list(self.backbone.parameters()),
            "g": list(self.head_g.parameters()),
            "h": list(self.head_h.parameters()),
        }

    def named_trainable(self):
        for prefix, mod in (("f", self.backbone), ("g", self.head_g), ("h", self.head_h)):
            for name, p in mod.named_parameters():
                yield "%s.%s" % (prefix, name), p

    def trainable_parameters(self):
        return [p for _, p in self.named_trainable()]

    def assert_partition(self):
        groups = self.param_groups()
        seen = set()
        for params in groups.values():
            for p in params:
                assert id(p) not in seen, "parameter appears in more than one group"
                seen.add(id(p))
        all_ids = {id(p) for p in self.trainable_parameters()}
        assert seen == all_ids, "partition does not cover all trainable parameters"

    def modules(self):
        return (self.backbone, self.head_g, self.head_h)

    def train_mode(self, flag):
        for m in self.modules():
            m.train(flag)

    def state_dict(self):
        return {
            "f": self.backbone.state_dict(),
            "g": self.head_g.state_dict(),
            "h": self.head_h.state_dict(),
        }

    def load_state_dict(self, state):
        self.backbone.load_state_dict(state["f"])
        self.head_g.load_state_dict(state["g"])
        self.head_h.load_state_dict(state["h"])

    def clone(self):
        return ModelBundle(copy.deepcopy(self.backbone), copy.deepcopy(self.head_g),
                           copy.deepcopy(self.head_h), self.feature_dim, self.num_classes)


ARCH_FEATURE_DIMS = {"wrn-28-2": 128, "wrn-28-8": 512, "wrn-37-2": 256}


def build_model(arch, num_classes, feature_dim=None):
    """Construct a ModelBundle for one of the documented architectures."""
    if arch == "wrn-28-2":
        backbone = WideResnet(blocks_per_group=4, width=2)
    elif arch == "wrn-28-8":
        backbone = WideResnet(blocks_per_group=4, width=8)
    elif arch == "wrn-37-2":
        backbone = WideResnet(blocks_per_group=4, width=2, num_groups=4)
    elif arch == "desk-cnn":
        backbone = DeskCnn(feature_dim=feature_dim or 64)
    else:
        raise ValueError("unknown architecture preset %r" % arch)
    d = backbone.feature_dim
    if feature_dim is not None and feature_dim != d:
        raise ValueError("arch %s has feature_dim %d, config asks for %d" % (arch, d, feature_dim))
    head_g = nn.Linear(d, num_classes)
    head_h = nn.Linear(d, d)
    # h: fan-in-scaled weights (nn.Linear default), zero bias
    nn.init.zeros_(head_h.bias)
    bundle = ModelBundle(backbone, head_g, head_h, d, num_classes)
    bundle.assert_partition()
    return bundle


def forward_features(bundle, images, train_mode):
    """Penultimate-layer activations; train_mode controls BN statistics updates."""
    if images.shape[1] != 3:
        raise ValueError("expected NCHW images with 3 channels, got %s" % (tuple(images.shape),))
    bundle.backbone.train(train_mode)
    return bundle.backbone(images)


def forward_logits(bundle, features):
    if features.shape[1] != bundle.feature_dim:
        raise ValueError("feature width %d != %d" % (features.shape[1], bundle.feature_dim))
    return bundle.head_g(features)


def project(bundle, features):
    if features.shape[1] != bundle.feature_dim:
        raise ValueError("feature width %d != %d" % (features.shape[1], bundle.feature_dim))
    return bundle.head_h(features)


def save_checkpoint(path, bundle, opt_state, ema_state, step, config_hash):
    """Named-parameter archive: model, optimizer velocity, EMA shadow, step, config hash."""
    torch.save({
        "model": bundle.state_dict(),
        "optimizer": opt_state,
        "ema": ema_state,
        "step": step,
        "config_hash": config_hash,
        "feature_dim": bundle.feature_dim,
        "num_classes": bundle.num_classes,
    }, path)


def load_checkpoint(path):
    return torch.load(path, map_location="cpu", weights_only=False)
