"""Networks: backbone, concept encoder, two classifier heads, generator, discriminator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .noise import concat_concepts

# VGG layer plans before width scaling; "M" is a 2x2 max-pool.
VGG_PLANS = {
    "vgg8": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M"],
    "vgg11": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "vgg19": [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
              512, 512, 512, 512, "M", 512, 512, 512, 512, "M"],
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "vanilla_gan"
    discriminator_depth: str = "vgg8"
    concept_count: int = 10
    noise_size: int = 10
    class_count: int = 10
    image_size: int = 32
    backbone_width: int = 16
    backbone_blocks: int = 1
    generator_width: int = 64
    discriminator_width: int = 16

    def __post_init__(self):
        if self.variant not in ("vanilla_gan", "cgan"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.discriminator_depth not in VGG_PLANS:
            raise ValueError(f"unknown discriminator depth {self.discriminator_depth!r}")
        for name in ("concept_count", "noise_size", "class_count", "image_size",
                     "backbone_width", "backbone_blocks", "generator_width", "discriminator_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.image_size < 4 or self.image_size & (self.image_size - 1):
            raise ValueError("image_size must be a power of two >= 4")

    @property
    def conditional(self) -> bool:
        return self.variant == "cgan"

    @property
    def rep_dim(self) -> int:
        return 4 * self.backbone_width

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# H: residual backbone
# ---------------------------------------------------------------------------


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Sequential()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Backbone(nn.Module):
    """Small ResNet: stem + three stages (widths w, 2w, 4w), global average pool."""

    def __init__(self, width: int = 16, blocks: int = 1):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, width, 3, 1, 1, bias=False), nn.BatchNorm2d(width), nn.ReLU())
        layers, cin = [], width
        for stage, mult in enumerate((1, 2, 4)):
            cout = width * mult
            for b in range(blocks):
                layers.append(BasicBlock(cin, cout, 2 if stage > 0 and b == 0 else 1))
                cin = cout
        self.stages = nn.Sequential(*layers)
        self.out_dim = cin
        # input standardisation; identity unless the run uses standardized inputs
        self.register_buffer("input_mean", torch.zeros(1, 3, 1, 1))
        self.register_buffer("input_std", torch.ones(1, 3, 1, 1))

    def forward(self, x):
        x = (x - self.input_mean) / self.input_std
        return F.adaptive_avg_pool2d(self.stages(self.stem(x)), 1).flatten(1)


# ---------------------------------------------------------------------------
# Lambda, Theta, T
# ---------------------------------------------------------------------------


class ConceptEncoder(nn.Module):
    """Maps representations to C concept scores in (0, 1)."""

    def __init__(self, rep_dim: int, concept_count: int):
        super().__init__()
        self.fc = nn.Linear(rep_dim, concept_count)

    def forward(self, rep):
        return torch.sigmoid(self.fc(rep))


# ---------------------------------------------------------------------------
# G: transposed-convolution generator
# ---------------------------------------------------------------------------


class Generator(nn.Module):
    """Concepts + noise (+ one-hot label) -> image in [0, 1].

    The input vector is projected to a ``width x 4 x 4`` seed, then doubled in
    resolution by stride-2 transposed convolutions until ``image_size``.
    """

    def __init__(self, in_dim: int, image_size: int, width: int = 64):
        super().__init__()
        self.in_dim = in_dim
        self.width = width
        self.project = nn.Sequential(nn.Linear(in_dim, width * 16), nn.ReLU())
        ups, ch, size = [], width, 4
        while size < image_size:
            nxt = max(ch // 2, 4)
            ups += [nn.ConvTranspose2d(ch, nxt, 4, 2, 1, bias=False), nn.BatchNorm2d(nxt), nn.ReLU()]
            ch, size = nxt, size * 2
        self.upsample = nn.Sequential(*ups)
        self.to_image = nn.Conv2d(ch, 3, 3, 1, 1)

    def forward(self, z):
        if z.dim() != 2 or z.shape[1] != self.in_dim:
            raise ValueError(f"generator expects B x {self.in_dim} input, got {tuple(z.shape)}")
        h = self.project(z).view(-1, self.width, 4, 4)
        return torch.sigmoid(self.to_image(self.upsample(h)))


# ---------------------------------------------------------------------------
# D: VGG-backbone binary classifier
# ---------------------------------------------------------------------------


class Discriminator(nn.Module):
    """VGG feature stack + two-layer head giving P(real).

    For the conditional variant a learned per-class plane is stacked onto
    the image as a fourth input channel. Pools are skipped once the feature
    map is 1x1, so deep plans still fit small images.
    """

    def __init__(self, depth: str, image_size: int, width: int = 16,
                 class_count: Optional[int] = None):
        super().__init__()
        scale = width / 64.0
        self.image_size = image_size
        self.class_count = class_count
        self.embed = None
        cin = 3
        if class_count is not None:
            self.embed = nn.Embedding(class_count, image_size * image_size)
            cin = 4
        layers, size = [], image_size
        for item in VGG_PLANS[depth]:
            if item == "M":
                if size > 1:
                    layers.append(nn.MaxPool2d(2))
                    size //= 2
                continue
            cout = max(int(item * scale), 1)
            layers += [nn.Conv2d(cin, cout, 3, 1, 1), nn.LeakyReLU(0.2)]
            cin = cout
        self.features = nn.Sequential(*layers)
        flat = cin * size * size
        self.head = nn.Sequential(nn.Linear(flat, max(flat // 2, 8)), nn.LeakyReLU(0.2),
                                  nn.Linear(max(flat // 2, 8), 1))

    def logits(self, x, labels=None):
        if self.embed is not None:
            if labels is None:
                raise ValueError("conditional discriminator needs labels")
            if labels.shape[0] != x.shape[0]:
                raise ValueError("label batch does not match image batch")
            plane = self.embed(labels).view(-1, 1, self.image_size, self.image_size)
            x = torch.cat([x, plane.to(x.dtype)], dim=1)
        elif labels is not None:
            raise ValueError("unconditional discriminator takes no labels")
        return self.head(self.features(x).flatten(1)).squeeze(1)

    def forward(self, x, labels=None):
        return torch.sigmoid(self.logits(x, labels))


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------


@dataclass
class ForwardOutput:
    logits: torch.Tensor  # Theta
    aux_logits: torch.Tensor  # T
    concepts: torch.Tensor
    reconstruction: torch.Tensor
    representation: torch.Tensor


MAIN_COMPONENTS = ("backbone", "concept_encoder", "classifier", "aux_classifier", "generator")
COMPONENTS = MAIN_COMPONENTS + ("discriminator",)


class ConceptGAN(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.backbone = Backbone(c.backbone_width, c.backbone_blocks)
        self.concept_encoder = ConceptEncoder(self.backbone.out_dim, c.concept_count)
        self.classifier = nn.Linear(self.backbone.out_dim, c.class_count)
        self.aux_classifier = nn.Linear(c.concept_count, c.class_count)
        gen_in = c.concept_count + c.noise_size + (c.class_count if c.conditional else 0)
        self.generator = Generator(gen_in, c.image_size, c.generator_width)
        self.discriminator = Discriminator(
            c.discriminator_depth, c.image_size, c.discriminator_width,
            c.class_count if c.conditional else None,
        )

    def main_parameters(self):
        return [p for name in MAIN_COMPONENTS for p in getattr(self, name).parameters()]

    def discriminator_parameters(self):
        return list(self.discriminator.parameters())

    def _check_images(self, x):
        s = self.config.image_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, s, s):
            raise ValueError(f"expected B x 3 x {s} x {s} images, got {tuple(x.shape)}")

    def encode_backbone(self, x):
        self._check_images(x)
        return self.backbone(x)

    def classify(self, rep):
        return self.classifier(rep)

    def encode_concepts(self, rep):
        return self.concept_encoder(rep)

    def classify_aux(self, concepts):
        return self.aux_classifier(concepts)

    def generator_input(self, concepts, noise, labels=None):
        z = concat_concepts(concepts, noise)
        if self.config.conditional:
            if labels is None:
                raise ValueError("cgan generator needs labels")
            z = torch.cat([z, F.one_hot(labels, self.config.class_count).to(z.dtype)], dim=1)
        return z

    def generate(self, z):
        return self.generator(z)

    def discriminate(self, x, labels=None):
        self._check_images(x)
        return self.discriminator(x, labels)

    def full_forward(self, x, noise, labels=None) -> ForwardOutput:
        rep = self.encode_backbone(x)
        concepts = self.encode_concepts(rep)
        z = self.generator_input(concepts, noise, labels)
        return ForwardOutput(
            logits=self.classify(rep),
            aux_logits=self.classify_aux(concepts),
            concepts=concepts,
            reconstruction=self.generate(z),
            representation=rep,
        )

    def predict(self, x):
        """Theta and T logits without running the generator."""
        rep = self.encode_backbone(x)
        return self.classify(rep), self.classify_aux(self.encode_concepts(rep))


def parameter_counts(model: ConceptGAN) -> dict[str, int]:
    counts = {name: sum(p.numel() for p in getattr(model, name).parameters()) for name in COMPONENTS}
    counts["total"] = sum(counts.values())
    return counts


def build_model(config: ModelConfig, seed: int = 0, dtype=torch.float32) -> ConceptGAN:
    """Initialise deterministically from ``seed`` without touching global RNG state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ConceptGAN(config)
    return model.to(dtype)
