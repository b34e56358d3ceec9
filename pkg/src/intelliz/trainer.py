"""Zero-shot training: alternating support and query steps.

Support step (matched text and reference):
    v_in = E_s(Y_in, mask_in);  Y~_in = G(X_n, v_in)
    loss = L_rec(Y~_in, Y_in) + l_kd * ||p_i - v_in|| + l_adv * (D(Y~_in, v_in) - 1)^2
    followed by one discriminator update on (Y_in, Y~_in).

Query step (mismatched text, m != n):
    v_in = E_s(Y_in, mask_in);  Y~_im = G(X_m, v_in);  v_im = E_s(Y~_im, mask_m)
    loss = l_cyc * ||v_im - v_in||
    with gradients through both encoder passes and the generator. The mask
    for the generated mel comes from the known voicing of X_m's symbols.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attention import PoolConfig
from .corpus import oracle_mask
from .data import MelNorm, PreparedCorpus
from .encoder import EncoderConfig, encode, encode_backward, init_encoder_params
from .errors import ConfigError, DivergenceError, EpisodeError, MissingPrototypeError, NoVoicedFramesError
from .fileio import write_checkpoint
from .grad import AdamState, DifferentiableOp, ParamSet, adam_step, make_rng, register_op
from .objectives import (DiscConfig, LossParts, LossWeights, adv_loss, adv_loss_grad, disc_backward,
                         disc_forward, disc_loss, disc_loss_grad, init_disc_params, l2_distance_backward,
                         l2_distance_forward, total_generator_loss)
from .tts import (GeneratorConfig, PrototypeTable, TextSeq, generate_backward, generate_forward,
                  init_generator_params, l1_backward, l1_forward)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "l_rec", "l_kd", "l_cyc", "l_adv", "l_disc", "l_gen")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        enc = dict(d.get("encoder", {}))
        if "pool" in enc:
            enc["pool"] = PoolConfig(**enc["pool"])
        return cls(EncoderConfig(**enc), GeneratorConfig(**d.get("generator", {})),
                   DiscConfig(**d.get("disc", {})))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    lr: float = 1e-3
    disc_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    # support steps, then query steps, repeated
    interleave: tuple[int, int] = (1, 1)
    use_mask: bool = True
    adv_on_query: bool = False
    # diagnostic knob; the training objective keeps this at 1
    rec_weight: float = 1.0
    freeze_generator: bool = False

    def __post_init__(self):
        object.__setattr__(self, "interleave", tuple(int(k) for k in self.interleave))
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("train: steps and batch_size must be >= 1")
        if self.lr <= 0 or self.disc_lr <= 0:
            raise ConfigError("train: learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train: betas must be in [0, 1)")
        if len(self.interleave) != 2 or min(self.interleave) < 0 or sum(self.interleave) < 1:
            raise ConfigError("train: interleave must be two non-negative counts, not both 0")
        if self.rec_weight < 0:
            raise ConfigError("train: rec_weight must be non-negative")

    def step_kind(self, step: int) -> str:
        ns, nq = self.interleave
        return "support" if step % (ns + nq) < ns else "query"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interleave"] = list(self.interleave)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class ZeroShotModel:
    cfg: ModelConfig
    enc: ParamSet
    gen: ParamSet
    disc: ParamSet
    prototypes: PrototypeTable
    norm: MelNorm

    def tensors(self) -> dict:
        out = {}
        for group in (self.enc, self.gen, self.disc):
            out.update(group)
        out.update(self.prototypes.to_tensors())
        return out

    def meta(self) -> dict:
        return {"kind": "zeroshot", "model": self.cfg.to_dict(), "norm": self.norm.to_list(),
                "speaker_ids": self.prototypes.speaker_ids}


@dataclass(eq=False)
class Episode:
    """One speaker's reference (X_n, Y_in) paired with a different text X_m."""

    speaker: str
    n: int
    m: int
    support_text: TextSeq
    mel: np.ndarray
    mask: np.ndarray | None
    query_text: TextSeq
    query_mask: np.ndarray | None

    def __post_init__(self):
        if self.n == self.m:
            raise EpisodeError(f"query sentence must differ from support sentence (n = m = {self.n})")
        if self.mel.shape[0] != self.support_text.frame_count:
            raise EpisodeError("reference mel length does not match its text durations")
        if self.mask is not None and len(self.mask) != self.mel.shape[0]:
            raise EpisodeError("mask is not aligned with the reference mel")
        if self.query_mask is not None and len(self.query_mask) != self.query_text.frame_count:
            raise EpisodeError("query mask is not aligned with the query text")


def make_episode(data: PreparedCorpus, speaker: str, n: int, m: int, use_mask: bool = True) -> Episode:
    utts = {u.sentence: u for u in data.by_speaker()[speaker]}
    u = utts[n]
    qtext = utts[m].text if m in utts else data.texts[m]
    return Episode(speaker, n, m, u.text, u.mel, u.mask if use_mask else None, qtext,
                   oracle_mask(qtext).bits if use_mask else None)


def sample_episodes(data: PreparedCorpus, rng: np.random.Generator, k: int, use_mask: bool = True) -> list:
    groups = data.by_speaker()
    speakers = sorted(groups)
    eps = []
    for _ in range(k):
        spk = speakers[rng.integers(len(speakers))]
        sents = sorted(u.sentence for u in groups[spk])
        n, m = rng.choice(sents, size=2, replace=False)
        eps.append(make_episode(data, spk, int(n), int(m), use_mask))
    return eps


def _add(acc: dict, grads: dict):
    for k, g in grads.items():
        if k in acc:
            acc[k] += g
        else:
            acc[k] = np.array(g, dtype=np.float64, copy=True)


def _query_mask(ep: Episode):
    if ep.query_mask is None:
        return None
    if not np.any(ep.query_mask):
        log.warning("query mask for sentence %d has no voiced frames; pooling over all frames", ep.m)
        return None
    return ep.query_mask


@dataclass
class StepResult:
    parts: dict
    enc_grads: dict
    gen_grads: dict
    disc_grads: dict


def support_losses(episodes, model: ZeroShotModel, cfg: TrainConfig) -> StepResult:
    """Forward + backward of the support objective (no parameter update)."""
    w = cfg.weights
    B = len(episodes)
    mc = model.cfg
    eg, gg, dg = {}, {}, {}
    tot = dict(rec=0.0, kd=0.0, adv=0.0, disc=0.0)
    for ep in episodes:
        if ep.speaker not in model.prototypes:
            raise MissingPrototypeError(f"no prototype for speaker {ep.speaker!r}")
        p = model.prototypes[ep.speaker]
        v, ecache = encode(ep.mel, ep.mask, model.enc, mc.encoder)
        Yh, gcache = generate_forward(ep.support_text, v, model.gen, mc.generator)
        rec, rcache = l1_forward(Yh, ep.mel)
        kd, kcache = l2_distance_forward(v, p)
        fake, fcache = disc_forward(Yh, v, model.disc, mc.disc)
        adv = adv_loss(fake)
        real, rdcache = disc_forward(ep.mel, v, model.disc, mc.disc)
        ld = disc_loss(real, fake)
        tot["rec"] += rec / B
        tot["kd"] += kd / B
        tot["adv"] += adv / B
        tot["disc"] += ld / B

        dYh = l1_backward(cfg.rec_weight / B, rcache)
        dYd, dvd, _ = disc_backward(w.lambda_adv * adv_loss_grad(fake) / B, fcache)
        dv_gen, g = generate_backward(dYh + dYd, gcache)
        _add(gg, g)
        dv_kd, _ = l2_distance_backward(w.lambda_kd / B, kcache)
        _, e = encode_backward(dv_gen + dvd + dv_kd, ecache)
        _add(eg, e)

        gr, gf = disc_loss_grad(real, fake)
        _add(dg, disc_backward(gr / B, rdcache)[2])
        _add(dg, disc_backward(gf / B, fcache)[2])
    parts = LossParts(rec=tot["rec"], kd=tot["kd"], adv=tot["adv"])
    gen_total = total_generator_loss(LossParts(rec=0.0, kd=parts.kd, adv=parts.adv), w) + cfg.rec_weight * parts.rec
    return StepResult({"l_rec": tot["rec"], "l_kd": tot["kd"], "l_adv": tot["adv"], "l_disc": tot["disc"],
                       "l_gen": gen_total}, eg, gg, dg)


def query_losses(episodes, model: ZeroShotModel, cfg: TrainConfig) -> StepResult:
    """Forward + backward of the cycle objective (no parameter update)."""
    w = cfg.weights
    B = len(episodes)
    mc = model.cfg
    eg, gg = {}, {}
    cyc_tot = adv_tot = 0.0
    for ep in episodes:
        v_in, c1 = encode(ep.mel, ep.mask, model.enc, mc.encoder)
        Ym, gcache = generate_forward(ep.query_text, v_in, model.gen, mc.generator)
        v_im, c2 = encode(Ym, _query_mask(ep), model.enc, mc.encoder)
        cyc, ccache = l2_distance_forward(v_im, v_in)
        cyc_tot += cyc / B
        dv_im, dv_in = l2_distance_backward(w.lambda_cyc / B, ccache)
        dYm, e2 = encode_backward(dv_im, c2)
        if cfg.adv_on_query:
            fake, fcache = disc_forward(Ym, v_in, model.disc, mc.disc)
            adv_tot += adv_loss(fake) / B
            dYd, dvd, _ = disc_backward(w.lambda_adv * adv_loss_grad(fake) / B, fcache)
            dYm = dYm + dYd
            dv_in = dv_in + dvd
        dv_gen, g = generate_backward(dYm, gcache)
        _, e1 = encode_backward(dv_in + dv_gen, c1)
        _add(eg, e1)
        _add(eg, e2)
        _add(gg, g)
    parts = {"l_cyc": cyc_tot, "l_gen": total_generator_loss(LossParts(cyc=cyc_tot, adv=adv_tot), w)}
    if cfg.adv_on_query:
        parts["l_adv"] = adv_tot
    return StepResult(parts, eg, gg, {})


class Trainer:
    """Holds the model, optimizer states and the episode RNG."""

    def __init__(self, model: ZeroShotModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.rng = make_rng(cfg.seed + 1)
        mk = lambda lr: AdamState(lr=lr, beta1=cfg.beta1, beta2=cfg.beta2)  # noqa: E731
        self.opt_enc = mk(cfg.lr)
        self.opt_gen = mk(cfg.lr)
        self.opt_disc = mk(cfg.disc_lr)

    def _apply(self, res: StepResult, update_disc: bool):
        adam_step(self.opt_enc, self.model.enc, res.enc_grads)
        if not self.cfg.freeze_generator:
            adam_step(self.opt_gen, self.model.gen, res.gen_grads)
        if update_disc and res.disc_grads:
            adam_step(self.opt_disc, self.model.disc, res.disc_grads)

    def support_step(self, episodes) -> dict:
        res = support_losses(episodes, self.model, self.cfg)
        _check_finite(res.parts)
        self._apply(res, update_disc=True)
        return res.parts

    def query_step(self, episodes) -> dict:
        res = query_losses(episodes, self.model, self.cfg)
        _check_finite(res.parts)
        if self.cfg.weights.lambda_cyc > 0 or (self.cfg.adv_on_query and self.cfg.weights.lambda_adv > 0):
            self._apply(res, update_disc=False)
        return res.parts

    def step(self, data: PreparedCorpus, step: int) -> dict:
        eps = sample_episodes(data, self.rng, self.cfg.batch_size, self.cfg.use_mask)
        if self.cfg.step_kind(step) == "support":
            return self.support_step(eps)
        return self.query_step(eps)


def _check_finite(parts: dict):
    for k, v in parts.items():
        if not np.isfinite(v):
            raise DivergenceError(f"non-finite {k} ({v})")


def build_model(pretrained_gen, prototypes: PrototypeTable, norm: MelNorm, mel_bins: int,
                model_cfg: ModelConfig = ModelConfig(), seed: int = 0) -> ZeroShotModel:
    """Fresh encoder and discriminator, a copy of the pretrained generator and
    a frozen copy of the prototype table."""
    if prototypes.dim != model_cfg.dim:
        raise ConfigError(f"prototype dim {prototypes.dim} != encoder dim {model_cfg.dim}")
    rng = make_rng(seed)
    enc = ParamSet(init_encoder_params(rng, mel_bins, model_cfg.encoder))
    disc = ParamSet(init_disc_params(rng, mel_bins, model_cfg.dim, model_cfg.disc))
    if pretrained_gen is None:
        gen = ParamSet(init_generator_params(rng, model_cfg.generator, mel_bins, model_cfg.dim))
    else:
        gen = ParamSet({k: np.array(v, copy=True) for k, v in pretrained_gen.items()})
    frozen = PrototypeTable(prototypes.speaker_ids, np.array(prototypes.table, copy=True)).freeze()
    return ZeroShotModel(model_cfg, enc, gen, disc, frozen, norm)


@dataclass
class TrainResult:
    model: ZeroShotModel
    metrics: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        return format_metrics(self.metrics)


def format_metrics(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(METRIC_COLUMNS)
    for r in rows:
        wr.writerow([r["step"]] + [repr(float(r[c])) if c in r else "" for c in METRIC_COLUMNS[1:]])
    return buf.getvalue()


def read_metrics(path_or_text) -> list:
    text = Path(path_or_text).read_text() if not str(path_or_text).startswith("step,") else path_or_text
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {"step": int(rec["step"])}
        row.update({k: float(v) for k, v in rec.items() if k != "step" and v != ""})
        rows.append(row)
    return rows


def train(data: PreparedCorpus, model: ZeroShotModel, cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Run ``cfg.steps`` alternating support/query steps.

    With ``out_dir`` the directory receives ``metrics.csv``, ``model.ckpt``
    and ``config.json``; it is assembled in a temp dir and renamed into
    place. On divergence the last parameters that produced finite losses are
    written instead and :class:`DivergenceError` is raised.
    """
    missing = [s for s in data.speakers if s not in model.prototypes]
    if missing:
        raise MissingPrototypeError(f"no prototype for speakers {missing}")
    if not model.prototypes.frozen:
        raise ConfigError("prototype table must be frozen before zero-shot training")
    trainer = Trainer(model, cfg)
    rows = []
    last_good = None
    try:
        for step in range(cfg.steps):
            snapshot = (model.enc.copy(), model.gen.copy(), model.disc.copy())
            parts = trainer.step(data, step)
            last_good = snapshot
            rows.append({"step": step, **parts})
    except (DivergenceError, FloatingPointError) as exc:
        if out_dir is not None and last_good is not None:
            bad = ZeroShotModel(model.cfg, *last_good, model.prototypes, model.norm)
            _write_run(out_dir, bad, cfg, rows)
        raise DivergenceError(f"training diverged at step {len(rows)}: {exc}") from None
    result = TrainResult(model, rows)
    if out_dir is not None:
        _write_run(out_dir, model, cfg, rows)
    return result


def _write_run(out_dir, model: ZeroShotModel, cfg: TrainConfig, rows):
    out_dir = Path(out_dir)
    with staged_dir(out_dir) as tmp:
        (tmp / "metrics.csv").write_text(format_metrics(rows))
        write_checkpoint(tmp / "model.ckpt", model.tensors(), model.meta())
        (tmp / "config.json").write_text(
            json.dumps({"model": model.cfg.to_dict(), "train": cfg.to_dict()}, indent=2, sort_keys=True) + "\n")


class staged_dir:
    """Context manager yielding a temp dir that replaces ``target`` on success.

    ``target`` must be missing or empty; on failure it is left untouched.
    """

    def __init__(self, target):
        self.target = Path(target)

    def __enter__(self) -> Path:
        t = self.target
        if t.exists() and (not t.is_dir() or any(t.iterdir())):
            raise FileExistsError(f"{t} exists and is not an empty directory")
        t.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=t.parent, prefix=f".{t.name}."))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.target.exists():
            self.target.rmdir()
        os.replace(self.tmp, self.target)
        return False


# -- evaluation ---------------------------------------------------------------

def embed_corpus(model: ZeroShotModel, data: PreparedCorpus, use_mask: bool = True) -> dict:
    """(speaker, sentence) -> embedding for every utterance."""
    out = {}
    for u in data.utterances:
        mask = u.mask if use_mask else None
        if mask is not None and not mask.any():
            raise NoVoicedFramesError(f"no voiced frames in reference {u.speaker}/{u.sentence}")
        out[(u.speaker, u.sentence)] = encode(u.mel, mask, model.enc, model.cfg.encoder)[0]
    return out


def speaker_distances(embeddings: dict) -> tuple[float, float]:
    """Mean intra-speaker and inter-speaker pairwise L2 distances."""
    keys = sorted(embeddings)
    intra, inter = [], []
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            d = float(np.linalg.norm(embeddings[a] - embeddings[b]))
            (intra if a[0] == b[0] else inter).append(d)
    return float(np.mean(intra)), float(np.mean(inter))


def evaluate(model: ZeroShotModel, data: PreparedCorpus, use_mask: bool = True, seed: int = 0) -> dict:
    """Embedding-space diagnostics: speaker separation, prototype fit, cycle gap."""
    embs = embed_corpus(model, data, use_mask)
    intra, inter = speaker_distances(embs)
    # the ratio is scale-free; margins grow with the embedding norm
    out = {"intra_speaker": intra, "inter_speaker": inter, "margin": inter - intra,
           "separation_ratio": inter / intra if intra > 0 else float("inf")}
    proto = [float(np.linalg.norm(v - model.prototypes[s])) for (s, _), v in embs.items() if s in model.prototypes]
    if proto:
        out["prototype_distance"] = float(np.mean(proto))
    rng = make_rng(seed)
    eps = sample_episodes(data, rng, max(len(data.utterances), 8), use_mask)
    cyc = []
    for ep in eps:
        v_in = encode(ep.mel, ep.mask, model.enc, model.cfg.encoder)[0]
        Ym = generate_forward(ep.query_text, v_in, model.gen, model.cfg.generator)[0]
        v_im = encode(Ym, _query_mask(ep), model.enc, model.cfg.encoder)[0]
        cyc.append(float(np.linalg.norm(v_im - v_in)))
    out["cycle_distance"] = float(np.mean(cyc))
    return out


def summarize(rows, column: str, window: int = 20) -> tuple[float, float]:
    """Means of ``column`` over its first and last ``window`` logged values."""
    vals = [r[column] for r in rows if column in r]
    if not vals:
        raise KeyError(column)
    w = max(1, min(window, len(vals) // 2 or 1))
    return float(np.mean(vals[:w])), float(np.mean(vals[-w:]))


# -- composite ops for the gradient-check suite ---------------------------------

def _tiny_model(rng, pool_average="all"):
    mc = ModelConfig(EncoderConfig(hidden=(7,), dim=4, pool=PoolConfig(heads=2, average=pool_average)),
                     GeneratorConfig(vocab_size=4, hidden=6, decoder_hidden=(5,)), DiscConfig(hidden=(6,)))
    M = 5
    enc = init_encoder_params(rng, M, mc.encoder)
    gen = init_generator_params(rng, mc.generator, M, mc.dim)
    disc = init_disc_params(rng, M, mc.dim, mc.disc)
    # zero biases plus a dead ReLU give exact zeros that sit on the kink
    for group in (enc, gen, disc):
        for k in group:
            if k.split(".")[1].startswith("b"):
                group[k] = 0.2 * rng.standard_normal(group[k].shape)
    protos = PrototypeTable(["a"], rng.standard_normal((1, mc.dim))).freeze()
    return mc, M, enc, gen, disc, protos


class _ObjectiveOp(DifferentiableOp):
    """Scalar training objective as a function of encoder + generator params."""

    def __init__(self, mc, disc, protos, episode, cfg, kind):
        self.mc, self.disc, self.protos, self.episode, self.cfg, self.kind = mc, disc, protos, episode, cfg, kind
        self.name = f"{kind}_objective"

    def forward(self, inputs):
        enc = {k: v for k, v in inputs.items() if k.startswith(("enc.", "pool."))}
        gen = {k: v for k, v in inputs.items() if k.startswith("gen.")}
        model = ZeroShotModel(self.mc, enc, gen, self.disc, self.protos, MelNorm(0.0, 1.0))
        fn = support_losses if self.kind == "support" else query_losses
        res = fn([self.episode], model, self.cfg)
        return np.array(res.parts["l_gen"]), res

    def backward(self, grad_out, cache):
        g = float(grad_out)
        out = {k: g * v for k, v in cache.enc_grads.items()}
        out.update({k: g * v for k, v in cache.gen_grads.items()})
        return out


def _objective_case(rng, kind, **cfg_kw):
    mc, M, enc, gen, disc, protos = _tiny_model(rng)
    xn = TextSeq([0, 2, 1], [2, 2, 3])
    xm = TextSeq([3, 1, 2, 0], [1, 2, 2, 1])
    ep = Episode("a", 0, 1, xn, rng.standard_normal((xn.frame_count, M)),
                 np.array([1, 1, 0, 0, 1, 1, 0]), xm, np.array([1, 0, 0, 1, 1, 0]))
    op = _ObjectiveOp(mc, disc, protos, ep, TrainConfig(**cfg_kw), kind)
    return op, {**enc, **gen}


@register_op("support_objective")
def _support_case(rng):
    return _objective_case(rng, "support")


@register_op("query_objective")
def _query_case(rng):
    return _objective_case(rng, "query")


@register_op("query_objective_with_adv")
def _query_adv_case(rng):
    return _objective_case(rng, "query", adv_on_query=True)
