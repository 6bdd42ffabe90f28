"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Every generate run
writes a manifest holding the fully resolved configuration; replaying a
manifest reproduces the output bitwise.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .denoisers import (
    Denoiser,
    MixtureDenoiser,
    PatternDenoiser,
    PointTargetDenoiser,
    border_pattern,
    constant_pattern,
)
from .errors import TileWorldError
from .grid import DenseWorld, load_world, save_world
from .inpaint import repaint_run
from .oracle import seam_discontinuity
from .pipeline import (
    IdentityDecoder,
    LinearDecoder,
    StageConfig,
    TileShadeDecoder,
    export_pointcloud,
    run_two_stage,
)
from .prompts import load_prompt_grid, uniform_grid
from .sampler import GuidanceConfig, RunConfig, Schedule, run_diffusion
from .tiling import cover_counts, coverage_check, plan_tiles

DEFAULT_STEPS = 25
DEFAULT_CFG = 7.5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must be X,Y,Z, got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_params(rest: str) -> dict[str, str]:
    params = {}
    for item in rest.split(","):
        if not item:
            continue
        key, _, value = item.partition("=")
        params[key] = value
    return params


def make_denoiser(spec: str) -> Denoiser:
    """Build a denoiser from a spec string like "point:mu=0.5"."""
    kind, _, rest = spec.partition(":")
    if kind == "point":
        params = _parse_params(rest)
        return PointTargetDenoiser(default=float(params.get("mu", 0.0)))
    if kind == "mixture":
        params = _parse_params(rest)
        mus = [float(x) for x in params.get("mu", "0").split("|")]
        return MixtureDenoiser([(1.0 / len(mus), m) for m in mus])
    if kind == "pattern":
        params = _parse_params(rest)
        name = params.get("name", rest if rest and "=" not in rest else "border")
        if name == "border":
            pat = border_pattern(
                base=float(params.get("base", 0.0)),
                lift=float(params.get("lift", 1.0)),
                width=int(params.get("width", 1)),
            )
        elif name.startswith("constant"):
            pat = constant_pattern(float(params.get("value", 0.0)))
        else:
            raise TileWorldError(f"unknown pattern {name!r}")
        return PatternDenoiser({}, default=pat)
    if kind == "remote":
        from .remote import RemoteDenoiser

        if rest.startswith("cmd="):
            return RemoteDenoiser.from_command(rest[4:])
        if rest.startswith("tcp="):
            host, _, port = rest[4:].rpartition(":")
            return RemoteDenoiser.from_tcp(host, int(port))
        raise TileWorldError(f"remote denoiser needs cmd= or tcp=, got {rest!r}")
    raise TileWorldError(f"unknown denoiser spec {spec!r}")


def make_decoder(spec: str, channels: int):
    if spec == "identity":
        return IdentityDecoder(channels)
    if spec == "shade":
        return TileShadeDecoder(channels)
    if spec.startswith("linear"):
        # deterministic fixed matrix C -> 3
        rng = np.arange(channels * 3, dtype=np.float32).reshape(channels, 3)
        return LinearDecoder(rng / max(channels * 3 - 1, 1))
    raise TileWorldError(f"unknown decoder {spec!r}")


def _default_threads() -> int:
    return int(os.environ.get("TILEWORLD_THREADS", "1"))


def _add_run_flags(p: _Parser, with_dims: bool = True) -> None:
    if with_dims:
        p.add_argument("--dims", type=_parse_dims, help="world dims X,Y,Z")
        p.add_argument("--channels", type=int, default=4)
    p.add_argument("--tile", type=int, help="tile size S")
    p.add_argument("--stride", type=int, default=None, help="stride s (default S/2)")
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    p.add_argument("--cfg", type=float, default=DEFAULT_CFG)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prompts", default=None, help="prompt grid file")
    p.add_argument("--prompt", default=None, help="single uniform prompt")
    p.add_argument("--prompt-cell-size", type=int, default=None)
    p.add_argument("--denoiser", default="point:mu=0.0")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--blend", choices=["cosine", "box"], default="cosine")


def _resolve_config(args) -> dict:
    """Materialize every default into a plain manifest-config dict."""
    if args.prompts and args.prompt:
        raise TileWorldError("--prompts and --prompt are mutually exclusive")
    prompt_text = None
    if args.prompts:
        with open(args.prompts, encoding="utf-8") as f:
            prompt_text = f.read()
    cfg = {
        "dims": list(args.dims),
        "channels": args.channels,
        "tile": args.tile,
        "stride": args.stride if args.stride is not None else args.tile // 2,
        "steps": args.steps,
        "cfg": args.cfg,
        "seed": args.seed,
        "prompt": args.prompt or "",
        "prompt_grid": prompt_text,
        "prompt_cell_size": args.prompt_cell_size,
        "denoiser": args.denoiser,
        "blend": args.blend,
        "threads": args.threads if args.threads is not None else _default_threads(),
    }
    return cfg


def _run_config_from_dict(cfg: dict) -> RunConfig:
    from .prompts import parse_prompt_grid

    if cfg.get("prompt_grid"):
        prompts = parse_prompt_grid(cfg["prompt_grid"], cfg.get("prompt_cell_size"))
    else:
        prompts = uniform_grid(cfg.get("prompt", ""))
    return RunConfig(
        dims=tuple(cfg["dims"]),
        channels=cfg["channels"],
        tile_size=cfg["tile"],
        stride=cfg["stride"],
        seed=cfg["seed"],
        schedule=Schedule.uniform(cfg["steps"]),
        guidance=GuidanceConfig(cfg["cfg"]),
        prompts=prompts,
        denoiser=make_denoiser(cfg["denoiser"]),
        threads=cfg["threads"],
        blend=cfg.get("blend", "cosine"),
    )


def _write_manifest(path, cfg: dict, denoiser: Denoiser, steps: list) -> None:
    caps = denoiser.capabilities
    manifest = {
        "engine": {"name": "tileworld", "version": __version__},
        "config": cfg,
        "denoiser": {
            "spec": cfg["denoiser"],
            "capabilities": {
                "max_size": caps.max_size,
                "pointwise": caps.pointwise,
                "deterministic": caps.deterministic,
            },
        },
        "calls": denoiser.call_count,
        "steps": steps,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def run_from_config(cfg: dict, out_path: str, manifest_path: str | None) -> None:
    config = _run_config_from_dict(cfg)
    collected: list = []
    world = run_diffusion(config, progress=True, collect=collected)
    save_world(out_path, world)
    if manifest_path:
        _write_manifest(manifest_path, cfg, config.denoiser, collected)


def cmd_generate(args) -> int:
    if args.replay:
        with open(args.replay, encoding="utf-8") as f:
            manifest = json.load(f)
        cfg = manifest["config"]
        run_from_config(cfg, args.out, args.manifest)
        return 0
    if args.dims is None or args.tile is None:
        raise TileWorldError("--dims and --tile are required")
    cfg = _resolve_config(args)
    if args.two_stage:
        config = _run_config_from_dict(cfg)
        stage = StageConfig(
            latent_dims=tuple(cfg["dims"]),
            latent_channels=cfg["channels"],
            tile_size=cfg["tile"],
            stride=cfg["stride"],
            upsample=args.upsample,
            sparse_channels=args.sparse_channels,
            structure_bias=args.structure_bias,
        )
        second = make_denoiser(args.denoiser2 or cfg["denoiser"])
        result = run_two_stage(
            stage,
            config.denoiser,
            second,
            seed=cfg["seed"],
            schedule=config.schedule,
            guidance=config.guidance,
            prompts=config.prompts,
            threads=cfg["threads"],
        )
        save_world(args.out, result.sparse)
        if args.manifest:
            cfg["two_stage"] = {
                "upsample": args.upsample,
                "sparse_channels": args.sparse_channels,
                "structure_bias": args.structure_bias,
                "denoiser2": args.denoiser2 or cfg["denoiser"],
            }
            _write_manifest(args.manifest, cfg, config.denoiser, [])
        return 0
    run_from_config(cfg, args.out, args.manifest)
    return 0


def cmd_expand(args) -> int:
    world = load_world(args.input)
    mask_world = load_world(args.mask)
    if not isinstance(world, DenseWorld) or not isinstance(mask_world, DenseWorld):
        raise TileWorldError("expand needs dense world and mask containers")
    if mask_world.dims != world.dims or mask_world.channels != 1:
        raise TileWorldError(
            f"mask dims {mask_world.dims} x{mask_world.channels} do not match "
            f"world dims {world.dims} (mask must be C=1)"
        )
    if args.tile is None:
        raise TileWorldError("--tile is required")
    args.dims = world.dims
    args.channels = world.channels
    cfg = _resolve_config(args)
    config = _run_config_from_dict(cfg)
    out = repaint_run(
        config,
        world,
        mask_world.data[..., 0],
        sigma=args.sigma,
        resample=args.resample,
    )
    save_world(args.out, out)
    return 0


def cmd_decode(args) -> int:
    world = load_world(args.input)
    if not isinstance(world, DenseWorld):
        from .grid import densify

        world = densify(world)
    from .pipeline import decode_tiled

    decoder = make_decoder(args.decoder, world.channels)
    decoded = decode_tiled(world, decoder, args.tile)
    if args.out:
        save_world(args.out, decoded)
    if args.pointcloud:
        n = export_pointcloud(args.pointcloud, decoded, args.threshold, args.tile)
        print(f"points={n}")
    return 0


def cmd_validate(args) -> int:
    layout = plan_tiles(args.dims, args.tile, args.stride or args.tile // 2)
    report = coverage_check(layout)
    counts = cover_counts(layout)
    print(f"dims={layout.dims} tile={layout.tile_size} stride={layout.stride}")
    print(f"tiles={len(layout.origins)}")
    for origin in layout.origins:
        print(f"  origin={origin}")
    print(f"cover_min={report.min_cover} cover_max={report.max_cover}")
    values, freq = np.unique(counts, return_counts=True)
    for v, n in zip(values, freq):
        print(f"cover[{v}]={n}")
    return 0


def _ablation_seams(blend: str, args) -> float:
    den = PatternDenoiser({}, default=border_pattern(base=0.0, lift=1.0, width=1))
    config = RunConfig(
        dims=(2 * args.tile, args.tile, args.tile),
        channels=2,
        tile_size=args.tile,
        stride=args.tile // 2,
        seed=args.seed,
        schedule=Schedule.uniform(args.steps),
        guidance=GuidanceConfig(1.0),
        prompts="",
        denoiser=den,
        blend=blend,
    )
    world = run_diffusion(config, progress=False)
    layout = plan_tiles(config.dims, config.tile_size, config.resolved_stride())
    return seam_discontinuity(world, layout).max_jump


def cmd_ablate(args) -> int:
    results = {}
    for blend in args.blend.split(","):
        results[blend] = _ablation_seams(blend, args)
        print(f"seam_max[{blend}]={results[blend]:.6f}")
    if "cosine" in results and "box" in results:
        ratio = results["cosine"] / results["box"] if results["box"] else float("inf")
        print(f"ratio={ratio:.4f}")
    return 0


def cmd_bench(args) -> int:
    den = MixtureDenoiser([(0.5, -1.0), (0.5, 1.0)])
    base = dict(
        dims=(24, 24, 24),
        channels=args.channels,
        tile_size=args.tile,
        seed=args.seed,
        schedule=Schedule.uniform(args.steps),
        guidance=GuidanceConfig(DEFAULT_CFG),
    )
    timings = {}
    for threads in (1, args.threads):
        den.call_count = 0
        config = RunConfig(**base, denoiser=den, threads=threads)
        start = time.perf_counter()
        run_diffusion(config, progress=False)
        timings[threads] = time.perf_counter() - start
        print(f"seconds[threads={threads}]={timings[threads]:.3f}")
    layout = plan_tiles(base["dims"], args.tile, args.tile // 2)
    expected = len(layout.origins) * args.steps * 2
    print(f"calls={den.call_count}")
    print(f"calls_expected={expected}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tileworld", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a world")
    _add_run_flags(p)
    p.add_argument("--two-stage", action="store_true")
    p.add_argument("--upsample", type=int, default=4)
    p.add_argument("--sparse-channels", type=int, default=4)
    p.add_argument("--structure-bias", type=float, default=0.0)
    p.add_argument("--denoiser2", default=None, help="sparse-stage denoiser spec")
    p.add_argument("--replay", default=None, help="re-run from a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("expand", help="expand/edit a world with known content")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--resample", type=int, default=1)
    _add_run_flags(p, with_dims=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("decode", help="tiled decode with stride = tile size")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--decoder", default="identity")
    p.add_argument("--tile", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--pointcloud", default=None)
    p.add_argument("--threshold", type=float, default=0.0)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("validate", help="print layout table and cover histogram")
    p.add_argument("--dims", type=_parse_dims, required=True)
    p.add_argument("--tile", type=int, required=True)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ablate", help="blending ablation seam report")
    p.add_argument("--blend", default="cosine,box")
    p.add_argument("--tile", type=int, default=16)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="call counts and serial vs threaded timing")
    p.add_argument("--tile", type=int, default=12)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=8)
    p.set_defaults(func=cmd_bench)

    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Expand `--config FILE` into flags inserted right after the subcommand,
    so explicit command-line flags win over file values."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv  # let argparse report the usage error
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2 :]
    extra: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            flag = "--" + key.strip().replace("_", "-")
            value = value.strip()
            if value.lower() == "true":
                extra.append(flag)
            else:
                extra.extend([flag, value])
    # insert after the subcommand (first positional argument)
    for j, tok in enumerate(rest):
        if not tok.startswith("-"):
            return rest[: j + 1] + extra + rest[j + 1 :]
    return rest + extra


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(argv)
    except OSError as e:
        print(f"tileworld: error: {e}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TileWorldError as e:
        print(f"tileworld: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"tileworld: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
