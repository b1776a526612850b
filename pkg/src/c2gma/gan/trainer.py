"""Training loop, configuration and checkpoint format for the domain-transfer model."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from ..baselines import mixcg_disc_loss, mixcg_stitch, random_stitch_specs
from ..datasets import DomainDataset
from ..errors import ConfigurationError, EmptyDatasetError, ParameterError
from ..utils import bytes_digest, seeded, set_strict_determinism
from .losses import (
    Batch,
    cycle_from_fakes,
    discriminator_losses,
    generator_losses,
    gradient_penalty,
    total_objective,
)
from .networks import ClassEmbedding, ConditionalGenerator, ProjectionDiscriminator

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iteration", "L_Gs", "L_Gt", "L_Ds", "L_Dt", "L_cyc_s", "L_cyc_t", "total")
MODES = ("c2gma", "mixcg")


@dataclass
class TrainConfig:
    lambda_s: float = 10.0
    lambda_t: float = 10.0
    lambda_cyc: float = 1.0
    lambda_gp: float = 0.01
    batch_size: int = 32
    critics: int = 2
    iterations: int = 187_500
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    # architecture
    gen_width: int = 32
    disc_width: int = 32
    n_res: int = 6
    n_down: int = 2
    gen_skip: bool = False
    disc_layers: int = 4
    embed_dim: int = 128
    sn_iterations: int = 1
    disc_pooling: str = "sum"
    # loss variants
    gp_squared: bool = True
    non_saturating: bool = False
    mode: str = "c2gma"
    alpha: float = 0.2
    # bookkeeping
    checkpoint_every: int = 0
    strict_determinism: bool = False

    def __post_init__(self):
        for name in ("lambda_s", "lambda_t", "lambda_cyc", "lambda_gp"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.critics < 1:
            raise ParameterError("critics must be >= 1")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelBundle:
    G_s: ConditionalGenerator
    G_t: ConditionalGenerator
    D_s: ProjectionDiscriminator
    D_t: ProjectionDiscriminator
    e_s: ClassEmbedding
    e_t: ClassEmbedding
    config: TrainConfig
    classes: tuple
    image_size: int
    opt_g: torch.optim.Optimizer | None = None
    opt_d: torch.optim.Optimizer | None = None
    iteration: int = 0
    history: list = field(default_factory=list)

    @property
    def conditional(self) -> bool:
        return self.config.mode == "c2gma"

    def modules(self) -> dict:
        return {k: getattr(self, k) for k in ("G_s", "G_t", "D_s", "D_t", "e_s", "e_t")}

    def generator_params(self):
        return [*self.G_s.parameters(), *self.G_t.parameters(), *self.e_s.parameters(), *self.e_t.parameters()]

    def discriminator_params(self):
        return [*self.D_s.parameters(), *self.D_t.parameters(), *self.e_s.parameters(), *self.e_t.parameters()]

    def train(self, mode: bool = True):
        for m in self.modules().values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def double(self):
        for m in self.modules().values():
            m.double()
        return self

    def condition_labels(self, labels: torch.Tensor) -> torch.Tensor:
        """Map dataset labels to embedding indices (everything to row 0 when unconditional)."""
        return labels if self.conditional else torch.zeros(len(labels), dtype=torch.int64)

    def state_dict(self) -> dict:
        state = {k: m.state_dict() for k, m in self.modules().items()}
        state["iteration"] = self.iteration
        if self.opt_g is not None:
            state["opt_g"] = self.opt_g.state_dict()
            state["opt_d"] = self.opt_d.state_dict()
        return state

    @property
    def checkpoint_id(self) -> str:
        h = bytes_digest(json.dumps(asdict(self.config), sort_keys=True).encode())[:8]
        return f"{self.config.mode}-{h}-it{self.iteration}"

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict(), directory / "bundle.pt")
        meta = {"config": asdict(self.config), "classes": list(self.classes), "image_size": self.image_size,
                "iteration": self.iteration, "checkpoint_id": self.checkpoint_id}
        (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        write_loss_log(self.history, directory / "losses.csv")
        return directory


def build_bundle(config: TrainConfig, classes, image_size: int) -> ModelBundle:
    """Fresh, seeded networks, embeddings and optimizers."""
    n_rows = len(classes) if config.mode == "c2gma" else 1
    with seeded(config.seed):
        G_s = ConditionalGenerator(config.gen_width, config.n_res, config.embed_dim, config.n_down, config.gen_skip)
        G_t = ConditionalGenerator(config.gen_width, config.n_res, config.embed_dim, config.n_down, config.gen_skip)
        D_s = ProjectionDiscriminator(config.disc_width, config.disc_layers, config.embed_dim, config.sn_iterations,
                                      config.disc_pooling)
        D_t = ProjectionDiscriminator(config.disc_width, config.disc_layers, config.embed_dim, config.sn_iterations,
                                      config.disc_pooling)
        e_s = ClassEmbedding(n_rows, config.embed_dim)
        e_t = ClassEmbedding(n_rows, config.embed_dim)
    bundle = ModelBundle(G_s, G_t, D_s, D_t, e_s, e_t, config, tuple(classes), image_size)
    betas = (config.beta1, config.beta2)
    bundle.opt_g = torch.optim.Adam(bundle.generator_params(), lr=config.lr, betas=betas)
    bundle.opt_d = torch.optim.Adam(bundle.discriminator_params(), lr=config.lr, betas=betas)
    return bundle


def load_bundle(directory) -> ModelBundle:
    directory = Path(directory)
    meta = json.loads((directory / "config.json").read_text())
    bundle = build_bundle(TrainConfig.from_dict(meta["config"]), meta["classes"], meta["image_size"])
    state = torch.load(directory / "bundle.pt", weights_only=True)
    for k, m in bundle.modules().items():
        m.load_state_dict(state[k])
    bundle.iteration = state["iteration"]
    if "opt_g" in state:
        bundle.opt_g.load_state_dict(state["opt_g"])
        bundle.opt_d.load_state_dict(state["opt_d"])
    bundle.history = read_loss_log(directory / "losses.csv")
    bundle.eval()
    return bundle


def write_loss_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in LOSS_COLUMNS})


def read_loss_log(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


class _Sampler:
    """Batch draws that are a pure function of the seed and the draw order."""

    def __init__(self, ds: DomainDataset, rng: np.random.Generator):
        self.images = torch.from_numpy(ds.images(np.float32)).unsqueeze(1)
        self.labels = torch.from_numpy(ds.hard_labels())
        self.rng = rng

    def draw(self, n: int) -> Batch:
        idx = torch.from_numpy(self.rng.integers(0, len(self.labels), size=n))
        return Batch(self.images[idx], self.labels[idx])


def _mixcg_inputs(sampler: _Sampler, n: int, alpha: float, rng: np.random.Generator):
    a, b = sampler.draw(n), sampler.draw(n)
    specs = random_stitch_specs(n, alpha, rng)
    stitched = torch.stack([mixcg_stitch(a.images[i], b.images[i], s) for i, s in enumerate(specs)])
    lam = torch.tensor([s.ratio for s in specs], dtype=stitched.dtype)
    return Batch(stitched, torch.zeros(n, dtype=torch.int64)), lam


def _mixcg_disc_losses(bundle: ModelBundle, src_real: Batch, tgt_real: Batch, fake_t, fake_s,
                       lam_t, lam_s, gen: torch.Generator):
    """Ratio-estimating discriminator terms on real/fake alpha blends, plus the penalty."""
    cfg = bundle.config
    cond = bundle.e_s(torch.zeros(len(lam_t), dtype=torch.int64))
    cond_t = bundle.e_t(torch.zeros(len(lam_t), dtype=torch.int64))
    shape = (-1, 1, 1, 1)
    blend_t = lam_t.view(shape) * tgt_real.images + (1 - lam_t.view(shape)) * fake_t
    blend_s = lam_s.view(shape) * src_real.images + (1 - lam_s.view(shape)) * fake_s
    est_t = torch.sigmoid(bundle.D_t(blend_t, cond_t))
    est_s = torch.sigmoid(bundle.D_s(blend_s, cond))
    disc_t = mixcg_disc_loss(est_t, lam_t).mean()
    disc_s = mixcg_disc_loss(est_s, lam_s).mean()
    if cfg.lambda_gp:
        zeros = torch.zeros(len(lam_t), dtype=torch.int64)
        disc_s = disc_s + cfg.lambda_gp * gradient_penalty(bundle.D_s, src_real.images, fake_s, zeros, bundle.e_s,
                                                           squared=cfg.gp_squared, generator=gen)
        disc_t = disc_t + cfg.lambda_gp * gradient_penalty(bundle.D_t, tgt_real.images, fake_t, zeros, bundle.e_t,
                                                           squared=cfg.gp_squared, generator=gen)
    return disc_s, disc_t


def train_domain_transfer(config: TrainConfig, source: DomainDataset, target: DomainDataset,
                          out_dir=None, progress=None) -> ModelBundle:
    """Adversarial + cycle training of both translation directions.

    Each iteration runs ``config.critics`` discriminator updates and then one
    generator update. The per-iteration loss row (columns ``LOSS_COLUMNS``) is
    appended to ``bundle.history``; ``progress(row)`` is called if given.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyDatasetError("source and target datasets must be non-empty")
    if tuple(source.classes) != tuple(target.classes):
        raise ConfigurationError(f"class rosters differ: {source.classes} vs {target.classes}")
    if source.image_shape != target.image_shape:
        raise ConfigurationError(f"image shapes differ: {source.image_shape} vs {target.image_shape}")
    if config.strict_determinism:
        set_strict_determinism(True)

    bundle = build_bundle(config, source.classes, source.image_shape[0])
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed + 1)
    src_sampler, tgt_sampler = _Sampler(source, rng), _Sampler(target, rng)
    B = config.batch_size
    mixcg = config.mode == "mixcg"

    def draw():
        if mixcg:
            src_in, lam_s_in = _mixcg_inputs(src_sampler, B, config.alpha, rng)
            tgt_in, lam_t_in = _mixcg_inputs(tgt_sampler, B, config.alpha, rng)
            return src_in, tgt_in, lam_t_in, lam_s_in
        src_in = src_sampler.draw(B)
        tgt_in = tgt_sampler.draw(B)
        return src_in, tgt_in, None, None

    for it in range(config.iterations):
        bundle.train()
        for _ in range(config.critics):
            src, tgt, lam_t, lam_s = draw()
            with torch.no_grad():
                fake_t = bundle.G_t(src.images, bundle.e_s(src.labels))
                fake_s = bundle.G_s(tgt.images, bundle.e_t(tgt.labels))
            if mixcg:
                src_real = Batch(src_sampler.draw(B).images, src.labels)
                tgt_real = Batch(tgt_sampler.draw(B).images, tgt.labels)
                disc_s, disc_t = _mixcg_disc_losses(bundle, src_real, tgt_real, fake_t, fake_s, lam_t, lam_s, gen)
            else:
                disc_s, disc_t = discriminator_losses(bundle, src, tgt, fake_t, fake_s, config.lambda_gp,
                                                      squared_gp=config.gp_squared,
                                                      non_saturating=config.non_saturating, generator=gen)
            loss_d = config.lambda_s * disc_s + config.lambda_t * disc_t
            bundle.opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            bundle.opt_d.step()

        src, tgt, _, _ = draw()
        # power iteration is frozen outside discriminator steps
        bundle.D_s.eval()
        bundle.D_t.eval()
        gen_s, gen_t, fake_t, fake_s = generator_losses(bundle, src, tgt, non_saturating=config.non_saturating,
                                                        detach_disc_condition=True)
        cyc_s, cyc_t = cycle_from_fakes(bundle.G_s, bundle.G_t, bundle.e_s, bundle.e_t, src, tgt, fake_t, fake_s)
        loss_g = (config.lambda_s * gen_s + config.lambda_t * gen_t
                  + config.lambda_s * config.lambda_cyc * cyc_s + config.lambda_t * config.lambda_cyc * cyc_t)
        bundle.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        bundle.opt_g.step()
        bundle.iteration = it + 1

        terms = [t.item() for t in (gen_s, gen_t, disc_s, disc_t, cyc_s, cyc_t)]
        row = dict(zip(LOSS_COLUMNS, [it + 1, *terms, float(total_objective(*terms, config))]))
        bundle.history.append(row)
        if progress is not None:
            progress(row)
        if out_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            bundle.save(Path(out_dir) / f"ckpt_{it + 1:07d}")

    bundle.eval()
    if out_dir is not None:
        bundle.save(out_dir)
    return bundle


def mean_cycle_loss(history, first: bool, window: int = 100) -> float:
    """Mean of (L_cyc_s + L_cyc_t) / 2 over the first or last ``window`` logged iterations."""
    rows = history[:window] if first else history[-window:]
    return float(np.mean([(r["L_cyc_s"] + r["L_cyc_t"]) / 2 for r in rows]))
