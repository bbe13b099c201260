"""Unpaired two-domain image translator: paired generators + patch discriminators.

Training uses the least-squares adversarial objective, an L1 cycle-consistency
penalty, an optional L1 identity penalty, and an image pool of past fakes for
discriminator updates. Everything is deterministic given the config seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DomainDataset, ImageSample, SYNTH_PREFIX, quantize_pixels
from .errors import ConfigError, TrainingError, ValidationError

A_TO_B = "a_to_b"
B_TO_A = "b_to_a"


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of values (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class TranslatorConfig:
    base_channels: int = 8
    n_residual_blocks: int = 2
    lambda_cyc: float = 10.0
    lambda_id: float = 0.0
    learning_rate: float = 2e-4
    beta1: float = 0.5
    steps: int = 2000
    batch_size: int = 1
    image_pool_size: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ValidationError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.n_residual_blocks < 0:
            raise ValidationError(
                f"n_residual_blocks must be >= 0, got {self.n_residual_blocks}"
            )
        if self.lambda_cyc < 0 or self.lambda_id < 0:
            raise ValidationError("loss weights lambda_cyc and lambda_id must be >= 0")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValidationError(f"beta1 must be in [0, 1), got {self.beta1}")
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.image_pool_size < 0:
            raise ValidationError(f"image_pool_size must be >= 0, got {self.image_pool_size}")


@dataclass(frozen=True)
class TrainStepRecord:
    step: int
    gen_total: float
    disc_a_loss: float
    disc_b_loss: float
    cyc_loss: float
    id_loss: float


@dataclass
class TrainLog:
    records: list[TrainStepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def cyc_losses(self) -> list[float]:
        return [r.cyc_loss for r in self.records]

    def as_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.records]


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Stride-2 down twice, residual blocks, stride-2 up twice; output in [0, 1]."""

    def __init__(self, base_channels: int, n_residual_blocks: int):
        super().__init__()
        c = base_channels
        layers = [
            nn.Conv2d(1, c, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * c),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(4 * c) for _ in range(n_residual_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * c, 2 * c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(2 * c),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * c, c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 1, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return (self.body(x) + 1.0) * 0.5


class PatchDiscriminator(nn.Module):
    """Three-layer strided conv scorer; outputs an unbounded patch grid."""

    def __init__(self, base_channels: int):
        super().__init__()
        c = base_channels
        self.body = nn.Sequential(
            nn.Conv2d(1, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * c, 1, 4, stride=1, padding=1),
        )

    def forward(self, x):
        return self.body(x)


@dataclass
class TranslatorModel:
    gen_ab: Generator
    gen_ba: Generator
    disc_a: PatchDiscriminator
    disc_b: PatchDiscriminator
    config: TranslatorConfig
    image_size: int
    step_count: int = 0

    def modules(self) -> dict[str, nn.Module]:
        return {
            "gen_ab": self.gen_ab,
            "gen_ba": self.gen_ba,
            "disc_a": self.disc_a,
            "disc_b": self.disc_b,
        }

    def generator(self, direction: str) -> Generator:
        if direction == A_TO_B:
            return self.gen_ab
        if direction == B_TO_A:
            return self.gen_ba
        raise ValidationError(f"direction must be {A_TO_B!r} or {B_TO_A!r}, got {direction!r}")

    def generator_parameters(self):
        return list(self.gen_ab.parameters()) + list(self.gen_ba.parameters())

    def discriminator_parameters(self):
        return list(self.disc_a.parameters()) + list(self.disc_b.parameters())

    def state_dict(self) -> dict:
        out = {}
        for prefix, module in self.modules().items():
            for name, tensor in module.state_dict().items():
                out[f"{prefix}.{name}"] = tensor
        return out

    def to_dtype(self, dtype: torch.dtype) -> "TranslatorModel":
        for module in self.modules().values():
            module.to(dtype)
        return self

    def eval(self) -> "TranslatorModel":
        for module in self.modules().values():
            module.eval()
        return self

    def assert_finite(self, context: str) -> None:
        for prefix, module in self.modules().items():
            for name, p in module.named_parameters():
                if not torch.isfinite(p).all():
                    raise TrainingError(f"{context}: parameter {prefix}.{name} is not finite")


def _init_gan_weights(module: nn.Module, gen: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            m.weight.data.normal_(0.0, 0.02, generator=gen)
            if m.bias is not None:
                m.bias.data.zero_()


def init_translator(cfg: TranslatorConfig, image_size: int) -> TranslatorModel:
    """Build a fresh translator with deterministic parameter initialization."""
    cfg.validate()
    if image_size < 8 or image_size % 4 != 0:
        raise ConfigError(
            f"image_size must be >= 8 and divisible by 4 for the two "
            f"stride-2 stages, got {image_size}"
        )
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "translator-init"))
    model = TranslatorModel(
        gen_ab=Generator(cfg.base_channels, cfg.n_residual_blocks),
        gen_ba=Generator(cfg.base_channels, cfg.n_residual_blocks),
        disc_a=PatchDiscriminator(cfg.base_channels),
        disc_b=PatchDiscriminator(cfg.base_channels),
        config=cfg,
        image_size=image_size,
    )
    for module in model.modules().values():
        _init_gan_weights(module, gen)
    return model


def lsgan_loss(scores: torch.Tensor, target_is_real: bool) -> torch.Tensor:
    """Mean squared distance of discriminator scores to the 1/0 target."""
    target = 1.0 if target_is_real else 0.0
    return ((scores - target) ** 2).mean()


def l1_mean(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    if x.shape != y.shape:
        raise ValidationError(f"l1_mean shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return (x - y).abs().mean()


def _check_finite(value: torch.Tensor, component: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise TrainingError(f"component {component!r} is not finite")
    return value


def _generator_forward(model: TranslatorModel, batch_a: torch.Tensor, batch_b: torch.Tensor):
    """Shared forward pass returning (total, components, fake_a, fake_b)."""
    if batch_a.shape[0] != batch_b.shape[0]:
        raise ValidationError(
            f"batch sizes differ: {batch_a.shape[0]} (a) vs {batch_b.shape[0]} (b)"
        )
    cfg = model.config
    fake_b = model.gen_ab(batch_a)
    fake_a = model.gen_ba(batch_b)
    adv = _check_finite(lsgan_loss(model.disc_b(fake_b), True), "adv_ab") + _check_finite(
        lsgan_loss(model.disc_a(fake_a), True), "adv_ba"
    )
    zero = torch.zeros((), dtype=batch_a.dtype)
    if cfg.lambda_cyc > 0:
        rec_a = model.gen_ba(fake_b)
        rec_b = model.gen_ab(fake_a)
        cyc = _check_finite(l1_mean(batch_a, rec_a) + l1_mean(batch_b, rec_b), "cyc_loss")
    else:
        cyc = zero
    if cfg.lambda_id > 0:
        idt = _check_finite(
            l1_mean(batch_b, model.gen_ab(batch_b)) + l1_mean(batch_a, model.gen_ba(batch_a)),
            "id_loss",
        )
    else:
        idt = zero
    total = _check_finite(adv + cfg.lambda_cyc * cyc + cfg.lambda_id * idt, "gen_total")
    components = {"adv": adv, "cyc_loss": cyc, "id_loss": idt}
    return total, components, fake_a, fake_b


def generator_objective(
    model: TranslatorModel, batch_a: torch.Tensor, batch_b: torch.Tensor
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Adversarial + weighted cycle + weighted identity loss for both generators."""
    total, components, _, _ = _generator_forward(model, batch_a, batch_b)
    return total, components


def discriminator_objective(
    disc: PatchDiscriminator, real_batch: torch.Tensor, fake_batch: torch.Tensor
) -> torch.Tensor:
    """0.5 * (real scored as real + fake scored as fake), least-squares form."""
    loss = 0.5 * (lsgan_loss(disc(real_batch), True) + lsgan_loss(disc(fake_batch), False))
    return _check_finite(loss, "disc_loss")


class ImagePool:
    """Buffer of past fakes; query() swaps pool entries in with probability 0.5."""

    def __init__(self, size: int, gen: torch.Generator):
        self.size = size
        self.gen = gen
        self.buffer: list[torch.Tensor] = []

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return batch
        out = []
        for i in range(batch.shape[0]):
            img = batch[i : i + 1]
            if len(self.buffer) < self.size:
                self.buffer.append(img.clone())
                out.append(img)
            elif torch.rand((), generator=self.gen).item() < 0.5:
                idx = int(torch.randint(0, self.size, (), generator=self.gen))
                out.append(self.buffer[idx].clone())
                self.buffer[idx] = img.clone()
            else:
                out.append(img)
        return torch.cat(out, dim=0)


class _BatchStream:
    """Yields index batches; each domain is shuffled independently per epoch."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = batch_size
        self.gen = torch.Generator().manual_seed(seed)
        self.queue: list[int] = []

    def next_batch(self) -> list[int]:
        while len(self.queue) < self.batch_size:
            self.queue.extend(torch.randperm(self.n, generator=self.gen).tolist())
        batch, self.queue = self.queue[: self.batch_size], self.queue[self.batch_size :]
        return batch


def _dataset_tensor(ds: DomainDataset) -> torch.Tensor:
    return torch.from_numpy(ds.pixel_stack()).unsqueeze(1)


def train_translator(
    train_a: DomainDataset, train_b: DomainDataset, cfg: TranslatorConfig
) -> tuple[TranslatorModel, TrainLog]:
    """Train on unpaired, unlabeled images from the two domains.

    Labels are never read. Per step: update both generators on the generator
    objective, then both discriminators on pooled fakes. Deterministic given
    cfg.seed; aborts with step index and component name on non-finite losses.
    """
    if len(train_a) == 0 or len(train_b) == 0:
        raise ValidationError("translator training requires nonempty datasets for both domains")
    if train_a.image_size != train_b.image_size:
        raise ValidationError(
            f"image_size mismatch: {train_a.image_size} (a) vs {train_b.image_size} (b)"
        )
    model = init_translator(cfg, train_a.image_size)
    tensor_a = _dataset_tensor(train_a)
    tensor_b = _dataset_tensor(train_b)
    stream_a = _BatchStream(len(train_a), cfg.batch_size, derive_seed(cfg.seed, "batches-a"))
    stream_b = _BatchStream(len(train_b), cfg.batch_size, derive_seed(cfg.seed, "batches-b"))
    pool_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "pool"))
    pool_a = ImagePool(cfg.image_pool_size, pool_gen)
    pool_b = ImagePool(cfg.image_pool_size, pool_gen)
    opt_g = torch.optim.Adam(
        model.generator_parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, 0.999)
    )
    opt_d = torch.optim.Adam(
        model.discriminator_parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, 0.999)
    )

    log = TrainLog()
    for step in range(1, cfg.steps + 1):
        batch_a = tensor_a[stream_a.next_batch()]
        batch_b = tensor_b[stream_b.next_batch()]
        try:
            opt_g.zero_grad()
            total, comps, fake_a, fake_b = _generator_forward(model, batch_a, batch_b)
            total.backward()
            opt_g.step()

            opt_d.zero_grad()
            disc_a_loss = discriminator_objective(
                model.disc_a, batch_a, pool_a.query(fake_a.detach())
            )
            disc_b_loss = discriminator_objective(
                model.disc_b, batch_b, pool_b.query(fake_b.detach())
            )
            (disc_a_loss + disc_b_loss).backward()
            opt_d.step()
            model.assert_finite(f"step {step}")
        except TrainingError as exc:
            raise TrainingError(f"step {step}: {exc}") from exc
        log.records.append(
            TrainStepRecord(
                step=step,
                gen_total=float(total.detach()),
                disc_a_loss=float(disc_a_loss.detach()),
                disc_b_loss=float(disc_b_loss.detach()),
                cyc_loss=float(comps["cyc_loss"].detach()),
                id_loss=float(comps["id_loss"].detach()),
            )
        )
    model.step_count = cfg.steps
    return model, log


def translate_dataset(
    model: TranslatorModel, ds: DomainDataset, direction: str
) -> DomainDataset:
    """Translate every sample, keeping ids (suffixed ~syn), labels, and order."""
    if ds.image_size != model.image_size:
        raise ValidationError(
            f"dataset image_size {ds.image_size} does not match model "
            f"image_size {model.image_size}"
        )
    generator = model.generator(direction)
    generator.eval()
    pixels = _dataset_tensor(ds)
    outputs = []
    with torch.no_grad():
        for start in range(0, pixels.shape[0], 32):
            out = generator(pixels[start : start + 32]).clamp(0.0, 1.0)
            outputs.append(out.squeeze(1).numpy())
    translated = np.concatenate(outputs, axis=0) if outputs else np.empty((0,))
    samples = [
        ImageSample(
            pixels=quantize_pixels(translated[i]),
            label=s.label,
            id=f"{s.id}~syn",
            provenance=f"{SYNTH_PREFIX}{ds.domain}",
        )
        for i, s in enumerate(ds.samples)
    ]
    return DomainDataset(f"{ds.domain}~syn", samples, ds.image_size)


def save_translator(model: TranslatorModel, directory: str | Path) -> Path:
    metadata = {
        "kind": "translator",
        "config": asdict(model.config),
        "image_size": model.image_size,
        "step_count": model.step_count,
    }
    return save_checkpoint(directory, metadata, model.state_dict())


def load_translator(directory: str | Path) -> TranslatorModel:
    metadata, state = load_checkpoint(directory)
    if metadata.get("kind") != "translator":
        raise ConfigError(f"checkpoint at {directory} is not a translator checkpoint")
    cfg_dict = dict(metadata["config"])
    cfg = TranslatorConfig(**cfg_dict)
    model = init_translator(cfg, metadata["image_size"])
    model.step_count = metadata["step_count"]
    for prefix, module in model.modules().items():
        sub = {
            name[len(prefix) + 1 :]: tensor
            for name, tensor in state.items()
            if name.startswith(prefix + ".")
        }
        module.load_state_dict(sub, strict=True)
    return model
