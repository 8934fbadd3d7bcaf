"""Operator entry point: corpus synthesis, codec roundtrip checks, training,
generation, evaluation, and oracle-driven sampler diagnostics."""
from __future__ import annotations

import argparse
import configparser
import sys

import numpy as np

from . import codec, corpus, evalkit, geometry
from .sampler import (
    FaceCountStrategy,
    NoisyOracle,
    PerfectOracle,
    SamplerConfig,
    TorchDenoiser,
    format_trace,
    generate,
)


class CliError(ValueError):
    pass


def _load_config(path: str) -> dict:
    """Flatten a sectioned `key = value` file into {section.key: value}."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise CliError(f"config file not found: {path}")
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[f"{section}.{key}"] = value
    return out


def _cfg_default(cfg: dict, key: str, cast, fallback):
    if key in cfg:
        return cast(cfg[key])
    return fallback


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshdiff", description=__doc__)
    p.add_argument("--config", default=None, help="sectioned key=value config file; flags override")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a synthetic corpus with token dumps and group indexes")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--resolution", type=int, default=None)
    s.add_argument("--manifest", default=None, help="use an existing manifest instead of generating one")

    s = sub.add_parser("roundtrip", help="verify detokenize(tokenize(q)) == q over a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--resolution", type=int, default=None)

    s = sub.add_parser("train", help="run the decoupled training loop")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--resume", default=None)

    s = sub.add_parser("generate", help="point-cloud-conditioned mesh generation")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--condition", required=True, help="OBJ file; faces are surface-sampled, bare vertices are used directly")
    s.add_argument("--out", required=True)
    s.add_argument("--faces", type=int, default=None)
    s.add_argument("--face-strategy", choices=("s1", "s2", "s3"), default=None)
    s.add_argument("--strategy-width", type=int, default=None)
    s.add_argument("--strategy-const", type=int, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--temperature", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--trace", default=None, help="write per-step `step committed mean_conf` lines here")
    s.add_argument("--tokens", default=None, help="also write the raw token dump here")

    s = sub.add_parser("eval", help="metric report between two meshes")
    s.add_argument("generated")
    s.add_argument("reference")
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--tau", type=float, default=None)

    s = sub.add_parser("oracle-sim", help="sampler diagnostics with a perfect or noisy oracle")
    s.add_argument("--oracle", choices=("perfect", "noisy"), default="perfect")
    s.add_argument("--kind", default="icosphere")
    s.add_argument("--faces", type=int, default=None, help="unused for synthetic kinds; reported")
    s.add_argument("--p", type=float, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--resolution", type=int, default=None)
    return p


def _sampler_config(args, cfg: dict) -> SamplerConfig:
    def pick(flag, key, cast, fallback):
        return flag if flag is not None else _cfg_default(cfg, key, cast, fallback)

    return SamplerConfig(
        steps=pick(args.steps, "sampler.steps", int, 200),
        sigma=pick(args.sigma, "sampler.sigma", float, 0.9),
        temperature=pick(getattr(args, "temperature", None), "sampler.temperature", float, 1.0),
        seed=pick(args.seed, "sampler.seed", int, 0),
    )


def _cmd_synth(args, cfg):
    count = args.count if args.count is not None else _cfg_default(cfg, "synth.count", int, 50)
    seed = args.seed if args.seed is not None else _cfg_default(cfg, "synth.seed", int, 0)
    res = args.resolution if args.resolution is not None else _cfg_default(cfg, "synth.resolution", int, 1024)
    if args.manifest:
        entries = corpus.read_manifest(args.manifest)
    else:
        entries = corpus.default_manifest(count, seed)
    items = corpus.build_corpus(entries, args.out, res)
    print(f"wrote {len(items)} meshes to {args.out}")
    return 0


def _cmd_roundtrip(args, cfg):
    res = args.resolution if args.resolution is not None else _cfg_default(cfg, "synth.resolution", int, 1024)
    items = corpus.load_corpus(args.corpus, res)
    mismatches = 0
    for it in items:
        result = codec.detokenize(it.tokens, res)
        canon = geometry.canonical_order(result.mesh)
        if not (
            np.array_equal(canon.vertices, it.quantized.vertices)
            and np.array_equal(canon.faces, it.quantized.faces)
        ):
            mismatches += 1
    print(f"{mismatches} mismatches")
    return 0 if mismatches == 0 else 2


def _cmd_train(args, cfg):
    from .net import NetConfig
    from .trainer import TrainConfig, fit

    net_cfg = NetConfig(
        d_model=_cfg_default(cfg, "net.d_model", int, 128),
        n_heads=_cfg_default(cfg, "net.n_heads", int, 4),
        resolution=_cfg_default(cfg, "net.resolution", int, 1024),
        max_faces=_cfg_default(cfg, "net.max_faces", int, 128),
        cond_points=_cfg_default(cfg, "net.cond_points", int, 256),
    )
    train_cfg = TrainConfig(
        steps=args.steps if args.steps is not None else _cfg_default(cfg, "train.steps", int, 100),
        batch_size=args.batch_size if args.batch_size is not None else _cfg_default(cfg, "train.batch_size", int, 4),
        lr_peak=_cfg_default(cfg, "train.lr_peak", float, 1e-4),
        warmup_steps=_cfg_default(cfg, "train.warmup_steps", int, 100),
        seed=args.seed if args.seed is not None else _cfg_default(cfg, "train.seed", int, 0),
        corpus_dir=args.corpus,
        out_dir=args.out,
        checkpoint_every=_cfg_default(cfg, "train.checkpoint_every", int, 100),
        w_connection=_cfg_default(cfg, "train.w_connection", float, 1.0),
        face_min=_cfg_default(cfg, "train.face_min", int, 0),
        face_max=_cfg_default(cfg, "train.face_max", int, 10**9),
    )
    ckpt = fit(net_cfg, train_cfg, resume_from=args.resume)
    print(f"final checkpoint: {ckpt}")
    return 0


def _condition_from_obj(path: str, count: int, seed: int) -> np.ndarray:
    with open(path, "rb") as f:
        mesh = geometry.read_obj(f.read())
    if len(mesh.faces):
        return geometry.sample_surface(mesh, count, seed).points
    if len(mesh.vertices) == 0:
        raise CliError("condition OBJ has no geometry")
    return mesh.vertices


def _cmd_generate(args, cfg):
    from .net import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    scfg = _sampler_config(args, cfg)
    strat_kind = args.face_strategy or _cfg_default(cfg, "sampler.face_strategy", str, "s1")
    if strat_kind in ("s1", "s2") and args.faces is None:
        raise CliError("--faces is required for strategies s1 and s2")
    strategy = FaceCountStrategy(
        kind=strat_kind,
        n=args.faces or 0,
        width=args.strategy_width if args.strategy_width is not None else _cfg_default(cfg, "sampler.strategy_width", int, 100),
        const=args.strategy_const if args.strategy_const is not None else _cfg_default(cfg, "sampler.strategy_const", int, 2000),
    )
    points = _condition_from_obj(args.condition, model.cfg.cond_points * 4, scfg.seed)
    denoiser = TorchDenoiser(model, points)
    state = generate(denoiser, strategy, scfg, max_faces=model.cfg.max_faces)
    result = codec.detokenize(state.tokens, model.cfg.resolution)
    mesh = geometry.dequantize(geometry.canonical_order(result.mesh))
    with open(args.out, "wb") as f:
        f.write(geometry.write_obj(mesh))
    if args.tokens:
        with open(args.tokens, "wb") as f:
            f.write(codec.write_token_dump(state.tokens))
    if args.trace:
        with open(args.trace, "w") as f:
            f.write(format_trace(state))
    print(f"generated {result.mesh.n_faces} faces ({result.dropped_faces} dropped) -> {args.out}")
    return 0


def _cmd_eval(args, cfg):
    meshes = []
    for path in (args.generated, args.reference):
        with open(path, "rb") as f:
            meshes.append(geometry.read_obj(f.read()))
    report = evalkit.evaluate_meshes(
        meshes[0],
        meshes[1],
        samples=args.samples if args.samples is not None else _cfg_default(cfg, "eval.samples", int, 10_000),
        seed=args.seed if args.seed is not None else _cfg_default(cfg, "eval.seed", int, 0),
        tau=args.tau if args.tau is not None else _cfg_default(cfg, "eval.tau", float, 0.02),
    )
    sys.stdout.write(report.as_text())
    return 0


def _cmd_oracle_sim(args, cfg):
    res = args.resolution if args.resolution is not None else _cfg_default(cfg, "synth.resolution", int, 1024)
    seed = args.seed if args.seed is not None else 0
    mesh = geometry.normalize_mesh(geometry.gen_synthetic(args.kind, {}, seed))
    q = geometry.canonical_order(geometry.quantize(mesh, res))
    target = codec.tokenize(q)
    scfg = _sampler_config(args, cfg)
    if args.oracle == "perfect":
        oracle = PerfectOracle(target, res)
    else:
        p = args.p if args.p is not None else 0.2
        oracle = NoisyOracle(target, res, p=p, seed=seed + 1)
    strategy = FaceCountStrategy("s1", n=len(target) // 9)
    state = generate(oracle, strategy, scfg)
    accuracy = float((state.tokens == target).mean())
    print(f"faces={len(target) // 9} steps={scfg.steps} token_accuracy={accuracy:.6f}")
    return 0 if accuracy == accuracy else 2


_COMMANDS = {
    "synth": _cmd_synth,
    "roundtrip": _cmd_roundtrip,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "oracle-sim": _cmd_oracle_sim,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        cfg = _load_config(args.config) if args.config else {}
        return _COMMANDS[args.command](args, cfg)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
