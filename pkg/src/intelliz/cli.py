"""Command-line entry point: ``intelliz <subcommand> ...``.

Every failure prints one line ``error: <code>: <message>`` to stderr and
exits with the code of the error class (see :mod:`intelliz.errors`). Configs
are parsed and validated before any output is written.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .corpus import load_corpus, make_corpus, write_corpus
from .data import MelNorm, prepare_corpus
from .dsp import AperiodicityMask, compute_mel, estimate_periodicity, make_mask
from .encoder import encode
from .errors import ConfigError, FileFormatError, IntelliZError, ShapeError
from .fileio import (atomic_write, read_checkpoint, read_wav, write_checkpoint, write_embedding, write_mask,
                     write_mel)
from .grad import ParamSet, make_rng
from .trainer import ModelConfig, ZeroShotModel, build_model, evaluate, train
from .tts import PrototypeTable, init_generator_params, pretrain_multispeaker

log = logging.getLogger("intelliz")

IO_EXIT = 14


def _with_seed(cfg: RunConfig, section: str, seed):
    if seed is None:
        return cfg
    sub = dataclasses.replace(getattr(cfg, section), seed=seed)
    return dataclasses.replace(cfg, **{section: sub})


def cmd_make_corpus(args, cfg: RunConfig):
    c = cfg.corpus
    speakers = c.speakers if args.speakers is None else args.speakers
    sentences = c.sentences if args.sentences is None else args.sentences
    seed = c.seed if args.seed is None else args.seed
    corpus = make_corpus(speakers, sentences, seed, cfg.dsp)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.utterances)} utterances to {args.out}")


def cmd_extract_mel(args, cfg: RunConfig):
    audio = read_wav(args.input)
    mel = compute_mel(audio, cfg.dsp)
    write_mel(args.out, mel)
    print(f"{mel.frame_count} frames x {mel.mel_bins} bins")


def cmd_extract_mask(args, cfg: RunConfig):
    threshold = cfg.dsp.periodicity_threshold if args.threshold is None else args.threshold
    if not 0 < threshold <= 1:
        raise ConfigError(f"--threshold must be in (0, 1], got {threshold}")
    audio = read_wav(args.input)
    mask = make_mask(estimate_periodicity(audio, cfg.dsp), threshold)
    write_mask(args.out, mask)
    print(f"{mask.voiced_count}/{len(mask)} voiced frames")


def cmd_pretrain(args, cfg: RunConfig):
    cfg = _with_seed(cfg, "pretrain", args.seed)
    data = prepare_corpus(load_corpus(args.corpus), cfg.dsp)
    res = pretrain_multispeaker(data.utterances, cfg.model.generator, cfg.model.dim, cfg.pretrain)
    meta = {"kind": "pretrain", "model": cfg.model.to_dict(), "norm": data.norm.to_list(),
            "speaker_ids": res.prototypes.speaker_ids,
            "loss_initial": res.losses[0], "loss_final": res.losses[-1]}
    write_checkpoint(args.out, {**res.generator, **res.prototypes.to_tensors()}, meta)
    print(f"pretrain l_rec {res.losses[0]:.4f} -> {res.losses[-1]:.4f}")


def _load_pretrained(path, cfg: RunConfig):
    tensors, meta = read_checkpoint(path)
    if meta.get("kind") != "pretrain" or PrototypeTable.KEY not in tensors:
        raise FileFormatError(f"{path}: not a pretraining checkpoint")
    gen = {k: v for k, v in tensors.items() if k.startswith("gen.")}
    mc = cfg.model
    expected = init_generator_params(make_rng(0), mc.generator, cfg.dsp.mel_bins, mc.dim)
    for k, v in expected.items():
        if k not in gen or gen[k].shape != v.shape:
            raise ShapeError(f"{path}: generator tensor {k} does not match the model config")
    protos = PrototypeTable(meta["speaker_ids"], tensors[PrototypeTable.KEY]).freeze()
    return gen, protos, MelNorm(*meta["norm"])


def cmd_train_zeroshot(args, cfg: RunConfig):
    cfg = _with_seed(cfg, "train", args.seed)
    gen, protos, norm = _load_pretrained(args.prototypes, cfg)
    data = prepare_corpus(load_corpus(args.corpus), cfg.dsp, norm)
    model = build_model(gen, protos, norm, cfg.dsp.mel_bins, cfg.model, seed=cfg.train.seed)
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise FileExistsError(f"{out} exists and is not an empty directory")
    res = train(data, model, cfg.train, out_dir=out)
    last = res.metrics[-1]
    print(f"trained {len(res.metrics)} steps; last l_gen {last['l_gen']:.4f}; wrote {out}")


def load_model(path) -> ZeroShotModel:
    tensors, meta = read_checkpoint(path)
    if meta.get("kind") != "zeroshot":
        raise FileFormatError(f"{path}: not a zero-shot model checkpoint")
    mc = ModelConfig.from_dict(meta["model"])
    groups = {p: ParamSet({k: v for k, v in tensors.items() if k.startswith(p)})
              for p in ("enc.", "gen.", "disc.")}
    groups["enc."].update({k: v for k, v in tensors.items() if k.startswith("pool.")})
    protos = PrototypeTable(meta["speaker_ids"], tensors[PrototypeTable.KEY]).freeze()
    return ZeroShotModel(mc, groups["enc."], groups["gen."], groups["disc."], protos, MelNorm(*meta["norm"]))


def cmd_embed(args, cfg: RunConfig):
    model = load_model(args.ckpt)
    audio = read_wav(args.input)
    mel = model.norm.apply(compute_mel(audio, cfg.dsp).frames)
    if args.no_mask:
        mask = AperiodicityMask.ones(mel.shape[0])
    else:
        mask = make_mask(estimate_periodicity(audio, cfg.dsp), cfg.dsp.periodicity_threshold)
    v, _ = encode(mel, mask, model.enc, model.cfg.encoder)
    write_embedding(args.out, v)
    print(f"embedding dim {v.size} from {mask.voiced_count}/{len(mask)} frames")


def cmd_eval_embeddings(args, cfg: RunConfig):
    model = load_model(args.ckpt)
    data = prepare_corpus(load_corpus(args.corpus), cfg.dsp, model.norm)
    stats = evaluate(model, data, use_mask=not args.no_mask, seed=0 if args.seed is None else args.seed)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["metric", "value"])
    for k, v in stats.items():
        wr.writerow([k, repr(float(v))])
    with atomic_write(args.out) as fh:
        fh.write(buf.getvalue().encode())
    for k, v in stats.items():
        print(f"{k:20s} {v:.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intelliz", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config file")
        sp.set_defaults(func=fn)
        return sp

    sp = add("make-corpus", cmd_make_corpus, "generate the synthetic corpus")
    sp.add_argument("--speakers", type=int)
    sp.add_argument("--sentences", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("extract-mel", cmd_extract_mel, "WAV -> mel file")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("extract-mask", cmd_extract_mask, "WAV -> voicing mask file")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--threshold", type=float)

    sp = add("pretrain", cmd_pretrain, "multi-speaker pretraining; writes generator + prototypes")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    sp = add("train-zeroshot", cmd_train_zeroshot, "zero-shot training from a pretraining checkpoint")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--prototypes", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    sp = add("embed", cmd_embed, "WAV -> speaker embedding file")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-mask", action="store_true", help="pool over all frames (no voicing mask)")

    sp = add("eval-embeddings", cmd_eval_embeddings, "embedding-space metrics over a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-mask", action="store_true")
    sp.add_argument("--seed", type=int)
    return p


def _fail(code: str, exit_code: int, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"error: {code}: {text}", file=sys.stderr)
    return exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except IntelliZError as exc:
        return _fail(exc.code, exc.exit_code, exc)
    except (FileNotFoundError, FileExistsError, IsADirectoryError, PermissionError) as exc:
        return _fail("io", IO_EXIT, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
