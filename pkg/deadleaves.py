"""
Dead Leaves Ideal Observer - command line

Commands:
1. generate: draw a dead leaves scene and render its image
2. prior: prior of a partition, a leaf table, or the prior ranking of a window
3. likelihood: per-block and total log likelihood of a partition
4. observe: posterior over every partition of a pixel window
5. oracle: Monte Carlo and grid estimates next to the analytic value
6. partitions: count or list the partitions of n pixels

JSON results go to stdout unless --output is given. Exit codes: 0 on
success, 2 for usage errors and invalid parameters (including windows over
the enumeration cap), 1 for unreadable files and failed computations.
"""

import argparse
import math
import sys
from pathlib import Path

from src.config import (
    CHANNELS,
    COLOR_LEVELS,
    OUTPUT_DIR,
    PARTITION_CAP,
    R_MAX,
    R_MIN,
    SIDE,
    THREADS,
    TOP_K,
)
from src.errors import DeadLeavesError, InvalidInputError
from src.generator import (
    GaussianModel,
    UniformModel,
    generate_scene,
    read_image,
    render_image,
    write_image,
    write_preview,
    write_scene,
)
from src.geometry import PixelSet
from src.io_formats import dump_json, load_json, to_jsonable
from src.likelihood import ObservationWindow, block_log_likelihoods
from src.observer import (
    posterior_sweep,
    posterior_top_k_streaming,
    read_window_bundle,
    summarize,
    top_k,
    write_records_csv,
    write_records_jsonl,
)
from src.oracle import (
    Estimate,
    grid_leaf_table,
    mc_leaf_ratio,
    mc_partition_prior,
)
from src.partitions import (
    bell_number,
    check_cap,
    enumerate_partitions,
    partition_from_json,
    partition_to_json,
)
from src.prior import PriorModel, leaf_ratio, prior_unordered
from src.specfun import RadiusLaw


# ---------------------------------------------------------------------------
# Flag grammar
# ---------------------------------------------------------------------------

def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _int(text: str, flag: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects an integer, got {text!r}") from None


def color_flag(text: str):
    """gaussian:MU[,MU,MU]:SIGMA or uniform:LEVELS"""
    kind, _, rest = text.partition(":")
    if kind == "gaussian":
        mu, sep, sigma = rest.partition(":")
        if not sep:
            raise argparse.ArgumentTypeError("--color expects gaussian:MU[,MU,MU]:SIGMA")
        return ("gaussian", _floats(mu, "--color"), _floats(sigma, "--color"))
    if kind == "uniform":
        return ("uniform", _int(rest, "--color"))
    raise argparse.ArgumentTypeError(f"Unknown color model {kind!r}; use gaussian:... or uniform:...")


def texture_flag(text: str):
    """gaussian:SIGMA or uniform:HALFWIDTH"""
    kind, _, rest = text.partition(":")
    if kind == "gaussian":
        return ("gaussian", _floats(rest, "--texture"))
    if kind == "uniform":
        return ("uniform", _int(rest, "--texture"))
    raise argparse.ArgumentTypeError(f"Unknown texture model {kind!r}; use gaussian:... or uniform:...")


def likelihood_flag(text: str) -> int:
    """uniform:LEVELS, the number of texture levels per channel (odd)."""
    kind, _, rest = text.partition(":")
    if kind != "uniform":
        raise argparse.ArgumentTypeError("--likelihood expects uniform:LEVELS")
    levels = _int(rest, "--likelihood")
    if levels < 1 or levels % 2 == 0:
        raise argparse.ArgumentTypeError(f"Texture levels must be odd and positive, got {levels}")
    return levels


def grid_flag(text: str) -> tuple[int, int]:
    """WxH"""
    w, sep, h = text.lower().partition("x")
    if not sep:
        raise argparse.ArgumentTypeError(f"--grid expects WxH, got {text!r}")
    return _int(w, "--grid"), _int(h, "--grid")


def window_flag(text: str) -> tuple[int, int, int, int]:
    """x0,y0,w,h"""
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"--window expects x0,y0,w,h, got {text!r}")
    x0, y0, w, h = (_int(p, "--window") for p in parts)
    return x0, y0, w, h


def pixels_flag(text: str) -> list[tuple[float, float]]:
    """x,y;x,y;..."""
    points = []
    for item in text.split(";"):
        if not item.strip():
            continue
        xy = _floats(item, "--pixels")
        if len(xy) != 2:
            raise argparse.ArgumentTypeError(f"Pixel {item!r} needs exactly two coordinates")
        points.append((xy[0], xy[1]))
    if not points:
        raise argparse.ArgumentTypeError("--pixels needs at least one pixel")
    return points


def grid_size(text: str) -> int:
    n = _int(text, "resolution")
    if n < 2:
        raise argparse.ArgumentTypeError(f"Resolution must be >= 2, got {n}")
    return n


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _banner(title: str) -> None:
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def _step(title: str) -> None:
    print("\n" + "-" * 60)
    print(title)
    print("-" * 60)


def _config(args) -> dict:
    """Every resolved flag, defaults included."""
    out = {}
    for key, value in vars(args).items():
        if key == "func":
            continue
        if isinstance(value, Path):
            value = str(value)
        out[key] = value
    return to_jsonable(out)


def _emit(result: dict, output: Path | None) -> bool:
    if output is None:
        print(dump_json(result))
        return True
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    dump_json(result, output)
    print(f"\nSaved: {output}")
    return True


def _pixel_list(pixels: PixelSet) -> list:
    return [[p.x, p.y] for p in pixels]


def _pixels_from_args(args) -> PixelSet | None:
    if getattr(args, "grid", None):
        w, h = args.grid
        return PixelSet.grid(w, h)
    if getattr(args, "window", None):
        x0, y0, w, h = args.window
        return PixelSet.grid(w, h, x0, y0)
    if getattr(args, "pixels", None):
        return PixelSet.from_points(args.pixels)
    return None


def _resolve_inputs(args, need_values: bool):
    """
    Pixel set, observation window, law, model and partition from flags and fixture.

    Explicit flags win over the fixture.
    """
    bundle = read_window_bundle(args.fixture) if getattr(args, "fixture", None) else None
    pixels = _pixels_from_args(args)
    window = None

    if bundle is not None:
        if pixels is not None and pixels != bundle.window.pixels:
            raise argparse.ArgumentTypeError("--fixture already fixes the pixel window")
        pixels = bundle.window.pixels
        window = bundle.window
    if pixels is None:
        raise argparse.ArgumentTypeError("Give a pixel window with --grid, --window, --pixels or --fixture")

    if need_values and window is None:
        if not getattr(args, "image", None):
            raise argparse.ArgumentTypeError("Observed values need --image or --fixture")
        window = ObservationWindow.from_image(read_image(args.image), pixels)

    rmin = args.rmin if args.rmin is not None else (bundle.law.r_min if bundle and bundle.law else R_MIN)
    rmax = args.rmax if args.rmax is not None else (bundle.law.r_max if bundle and bundle.law else R_MAX)
    law = RadiusLaw(rmin, rmax)

    partition = None
    if getattr(args, "partition", None):
        partition = _load_partition(args.partition, pixels, getattr(args, "ordered", False))
    elif bundle is not None and bundle.partition is not None:
        partition = bundle.partition

    model = bundle.model if bundle is not None else None
    return pixels, window, law, partition, model


def _load_partition(text: str, pixels: PixelSet, ordered: bool):
    """Inline JSON, or the path of a JSON file."""
    if not text.lstrip().startswith("[") and Path(text).is_file():
        return partition_from_json(load_json(Path(text)), pixels, ordered=ordered)
    return partition_from_json(text, pixels, ordered=ordered)


def _build_model(args, channels: int, fallback=None):
    """Color/texture model from --color/--texture/--likelihood, else fallback."""
    if getattr(args, "likelihood", None):
        levels = COLOR_LEVELS
        if args.color is not None:
            if args.color[0] != "uniform":
                raise argparse.ArgumentTypeError("--likelihood uniform needs a uniform --color")
            levels = args.color[1]
        return UniformModel(levels, (args.likelihood - 1) // 2, channels)

    color, texture = args.color, args.texture
    if color is None and texture is None:
        if fallback is None:
            raise argparse.ArgumentTypeError("Give --color and --texture (or --likelihood)")
        return fallback
    if color is None or texture is None or color[0] != texture[0]:
        raise argparse.ArgumentTypeError("--color and --texture must both be gaussian or both uniform")

    if color[0] == "gaussian":
        mu, sigma_c = color[1], color[2]
        n = max(len(mu), len(sigma_c), len(texture[1]))
        return GaussianModel.create(mu, sigma_c, texture[1], channels=n if n > 1 else channels)
    return UniformModel(color[1], texture[1], channels)


def _add_law_args(p, defaults: bool = False) -> None:
    p.add_argument("--rmin", type=float, default=R_MIN if defaults else None,
                   help=f"Smallest leaf radius in pixels (default: {R_MIN})")
    p.add_argument("--rmax", type=float, default=R_MAX if defaults else None,
                   help=f"Largest leaf radius in pixels (default: {R_MAX})")


def _add_window_args(p, fixture: bool = True) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--grid", type=grid_flag, help="Pixel grid WxH at the origin")
    group.add_argument("--window", type=window_flag, help="Pixel rectangle x0,y0,w,h (origin bottom-left)")
    group.add_argument("--pixels", type=pixels_flag, help='Explicit pixels "x,y;x,y;..."')
    if fixture:
        p.add_argument("--fixture", type=Path, help="Window bundle JSON with pixels, values, law and model")


def _add_model_args(p) -> None:
    p.add_argument("--color", type=color_flag, help="gaussian:MU[,MU,MU]:SIGMA or uniform:LEVELS")
    p.add_argument("--texture", type=texture_flag, help="gaussian:SIGMA or uniform:HALFWIDTH")
    p.add_argument("--likelihood", type=likelihood_flag,
                   help="Shorthand uniform:LEVELS for a uniform texture with LEVELS levels")
    p.add_argument("--exact-discrete", action="store_true",
                   help="Marginalize leaf colors exactly for uniform models")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def run_generate(args) -> bool:
    """Draw a scene, render it and write scene JSON, PFM image and optional preview."""
    law = RadiusLaw(args.rmin, args.rmax, float(args.size))
    model = _build_model(args, CHANNELS)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    _banner("Dead Leaves - Scene Generation")
    print(f"  - Size: {args.size}x{args.size}")
    print(f"  - Radii: [{law.r_min}, {law.r_max}]")
    print(f"  - Seed: {args.seed}")

    _step("STEP 1: Drawing leaves")
    scene = generate_scene(law, args.seed)
    print(f"\n{scene.n_leaves:,} visible leaves from {scene.draws:,} draws")

    _step("STEP 2: Rendering")
    image = render_image(scene, model, args.seed)
    scene.config = _config(args)
    scene_path = out_dir / f"{args.name}.json"
    image_path = out_dir / f"{args.name}.pfm"
    write_scene(scene_path, scene)
    write_image(image_path, image)
    print(f"\nSaved: {scene_path}")
    print(f"Saved: {image_path}")

    if args.preview:
        preview_path = out_dir / f"{args.name}.{'ppm' if model.channels == 3 else 'pgm'}"
        write_preview(preview_path, image, [
            f"seed {args.seed}",
            f"law {dump_json(law.to_dict()).replace(chr(10), '')}",
            f"model {dump_json(model.to_dict()).replace(chr(10), '')}",
            f"config {dump_json(scene.config).replace(chr(10), '')}",
        ])
        print(f"Saved: {preview_path}")
    else:
        print("\n[Skipping 16-bit preview]")

    _banner("Generation Complete!")
    return True


def run_prior(args) -> bool:
    """Prior of one partition, the leaf table, or the prior ranking of all partitions."""
    pixels, _, law, partition, _ = _resolve_inputs(args, need_values=False)
    engine = PriorModel(pixels, law)
    result = {"command": "prior", "config": _config(args), "law": law.to_dict(),
              "pixels": _pixel_list(pixels)}

    if args.table:
        table = engine.table_for(pixels.full_mask)
        result.update(kind="table", nonempty_mass=table.nonempty_mass, masses=table.to_json())
    elif partition is not None:
        ordered = args.ordered
        res = engine.prior_ordered(partition) if ordered else engine.prior_unordered(partition)
        result.update(kind="partition", mode=res.mode, partition=partition_to_json(partition, pixels),
                      value=res.value, log_value=res.log_value)
        if ordered:
            result["layers"] = [
                {"block": block, "mass": mass, "nonempty_mass": total,
                 "ratio": mass / total if total > 0 else None}
                for block, (mass, total) in zip(
                    partition_to_json(partition, pixels), engine.layers(partition))
            ]
    else:
        check_cap(len(pixels), args.cap)
        engine.prefetch(range(1, 1 << len(pixels)), threads=args.threads,
                        progress=args.output is not None)
        scored = [
            (engine.log_prior_unordered(p), index, p)
            for index, p in enumerate(enumerate_partitions(pixels, args.cap))
        ]
        scored.sort(key=lambda row: (-row[0], row[1]))
        result.update(kind="ranking", n_partitions=len(scored), ranking=[
            {"index": index, "partition": partition_to_json(p, pixels),
             "log_prior": lp, "prior": math.exp(lp)}
            for lp, index, p in scored[:args.top_k]
        ])

    return _emit(result, args.output)


def run_likelihood(args) -> bool:
    """Per-block and total log likelihood of one partition."""
    pixels, window, law, partition, bundle_model = _resolve_inputs(args, need_values=True)
    if partition is None:
        raise argparse.ArgumentTypeError("likelihood needs --partition (or a fixture carrying one)")
    model = _build_model(args, window.channels, fallback=bundle_model)
    blocks = block_log_likelihoods(window, partition, model, exact_discrete=args.exact_discrete)
    total = math.fsum(blocks)

    result = {
        "command": "likelihood",
        "config": _config(args),
        "model": model.to_dict(),
        "partition": partition_to_json(partition, pixels),
        "blocks": [
            {"block": block, "log_likelihood": value}
            for block, value in zip(partition_to_json(partition, pixels), blocks)
        ],
        "log_likelihood": total,
        "likelihood": math.exp(total),
    }
    return _emit(result, args.output)


def run_observe(args) -> bool:
    """Score every partition of the window and report the posterior."""
    pixels, window, law, _, bundle_model = _resolve_inputs(args, need_values=True)
    model = _build_model(args, window.channels, fallback=bundle_model)
    to_files = args.output_dir is not None
    config = _config(args)

    if to_files:
        _banner("Dead Leaves - Ideal Observer")
        print(f"  - Pixels: {len(pixels)} ({bell_number(len(pixels)):,} partitions)")
        print(f"  - Radii: [{law.r_min}, {law.r_max}]")
        print(f"  - Model: {model.to_dict()['variant']}")
        _step("STEP 1: Posterior sweep")

    if args.streaming:
        records, stats = posterior_top_k_streaming(
            window, law, model, args.top_k, cap=args.cap,
            exact_discrete=args.exact_discrete, progress=to_files,
        )
        summary = to_jsonable({
            "n_pixels": len(pixels),
            "n_partitions": stats["n_partitions"],
            "log_evidence": stats["log_evidence"],
            "map": records[0].to_dict(pixels),
        })
        top = records
    else:
        records = posterior_sweep(
            window, law, model, cap=args.cap, threads=args.threads,
            exact_discrete=args.exact_discrete, progress=to_files,
        )
        summary = summarize(records, pixels)
        top = top_k(records, args.top_k)

    summary = {"command": "observe", "config": config, "law": law.to_dict(),
               "model": model.to_dict(), **summary}

    if not to_files:
        summary["top"] = [r.to_dict(pixels) for r in top]
        print(dump_json(summary))
        return True

    _step("STEP 2: Writing results")
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records_jsonl(records, out_dir / "records.jsonl", pixels)
    write_records_csv(top, out_dir / "posterior.csv", pixels)
    dump_json(summary, out_dir / "summary.json")
    for name in ("records.jsonl", "posterior.csv", "summary.json"):
        print(f"Saved: {out_dir / name}")

    best = summary["map"]
    print(f"\nMAP partition: {best['partition']}")
    print(f"  - Posterior: {best['posterior']:.6g}")
    _banner("Observation Complete!")
    return True


def _subset_mask(args, pixels: PixelSet) -> int:
    if not args.subset:
        raise argparse.ArgumentTypeError(f"oracle {args.mode} needs --subset")
    return pixels.mask_of(args.subset)


def run_oracle(args) -> bool:
    """Estimate a leaf ratio or a partition prior independently of the analytic code."""
    pixels, _, law, partition, _ = _resolve_inputs(args, need_values=False)
    progress = args.output is not None

    if args.mode == "mc-leaf":
        v = _subset_mask(args, pixels)
        est = mc_leaf_ratio(pixels, v, law, args.samples, args.seed, args.threads, progress)
        target, analytic = "leaf_ratio", leaf_ratio(pixels, v, law)
    elif args.mode == "grid-leaf":
        v = _subset_mask(args, pixels)
        table = grid_leaf_table(pixels, law, args.pos_res, args.rad_res, progress)
        est = Estimate(table.ratio(v), 0.0, args.pos_res ** 2 * (args.rad_res or 1))
        target, analytic = "leaf_ratio", leaf_ratio(pixels, v, law)
    else:
        if partition is None:
            raise argparse.ArgumentTypeError("oracle mc-prior needs --partition")
        est = mc_partition_prior(pixels, partition, law, args.samples, args.seed, args.threads, progress)
        target, analytic = "prior_unordered", prior_unordered(partition, pixels, law).value

    result = {
        "command": "oracle",
        "mode": args.mode,
        "config": _config(args),
        "law": law.to_dict(),
        **est.to_dict(),
        "target": target,
        "analytic": analytic,
        "z_score": est.z_score(analytic),
    }
    return _emit(result, args.output)


def run_partitions(args) -> bool:
    """Bell number of n, or every partition of n pixels as restricted-growth strings."""
    if args.count is not None:
        if args.count < 0:
            raise argparse.ArgumentTypeError(f"--count needs n >= 0, got {args.count}")
        result = {"command": "partitions", "n": args.count, "count": bell_number(args.count)}
    else:
        labels = [list(p.labels(args.list)) for p in enumerate_partitions(args.list, args.cap)]
        result = {"command": "partitions", "n": args.list, "count": len(labels), "labels": labels}
    return _emit(result, args.output)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Dead leaves image model and ideal observer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Draw and render a dead leaves image")
    p.add_argument("--size", type=int, default=SIDE, help=f"Image side in pixels (default: {SIDE})")
    _add_law_args(p, defaults=True)
    p.add_argument("--color", type=color_flag, default="gaussian:0.5:0.1",
                   help="gaussian:MU[,MU,MU]:SIGMA or uniform:LEVELS (default: gaussian:0.5:0.1)")
    p.add_argument("--texture", type=texture_flag, default="gaussian:0.05",
                   help="gaussian:SIGMA or uniform:HALFWIDTH (default: gaussian:0.05)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="scene", help="Base name of the output files")
    p.add_argument("--output-dir", type=Path, default=OUTPUT_DIR)
    p.add_argument("--preview", action="store_true", help="Also write a 16-bit PPM/PGM preview")
    p.set_defaults(func=run_generate)

    p = sub.add_parser("prior", help="Analytic partition prior")
    _add_window_args(p)
    _add_law_args(p)
    p.add_argument("--partition",
                   help="Partition as JSON blocks of [x, y] pairs, or a JSON file. "
                        "Scored with the unordered prior unless --ordered is given")
    p.add_argument("--ordered", action="store_true",
                   help="Depth-ordered prior with the first block on top, as in the 3x3 worked example "
                        "(7.437e-4 needs this flag)")
    p.add_argument("--table", action="store_true", help="Export the leaf table of the window")
    p.add_argument("--top-k", type=int, default=TOP_K)
    p.add_argument("--cap", type=int, default=PARTITION_CAP)
    p.add_argument("--threads", type=int, default=THREADS)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=run_prior)

    p = sub.add_parser("likelihood", help="Log likelihood of a partition")
    _add_window_args(p)
    _add_law_args(p)
    _add_model_args(p)
    p.add_argument("--image", type=Path, help="PFM or PNM image holding the window")
    p.add_argument("--partition", help="Partition as JSON blocks of [x, y] pairs, or a JSON file")
    p.add_argument("--output", type=Path)
    p.set_defaults(func=run_likelihood, ordered=False)

    p = sub.add_parser("observe", help="Posterior over all partitions of a window")
    _add_window_args(p)
    _add_law_args(p)
    _add_model_args(p)
    p.add_argument("--image", type=Path, help="PFM or PNM image holding the window")
    p.add_argument("--cap", type=int, default=PARTITION_CAP,
                   help=f"Largest window to enumerate (default: {PARTITION_CAP})")
    p.add_argument("--top-k", type=int, default=TOP_K)
    p.add_argument("--threads", type=int, default=THREADS)
    p.add_argument("--streaming", action="store_true", help="Keep only the top k records in memory")
    p.add_argument("--output-dir", type=Path, help="Write records.jsonl, posterior.csv and summary.json here")
    p.set_defaults(func=run_observe)

    p = sub.add_parser("oracle", help="Independent estimates of leaf ratios and priors")
    p.add_argument("mode", choices=["mc-leaf", "grid-leaf", "mc-prior"])
    _add_window_args(p)
    _add_law_args(p)
    p.add_argument("--subset", type=pixels_flag, help='Leaf footprint "x,y;..." for the leaf modes')
    p.add_argument("--partition", help="Partition for mc-prior, JSON or a JSON file")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pos-res", type=grid_size, default=200, help="Grid positions per side")
    p.add_argument("--rad-res", type=grid_size, help="Radius cells; omit to integrate radii exactly")
    p.add_argument("--threads", type=int, default=THREADS)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=run_oracle, ordered=False)

    p = sub.add_parser("partitions", help="Count or list set partitions")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--count", type=int, metavar="N", help="Print the Bell number B_N")
    group.add_argument("--list", type=int, metavar="N", help="List the partitions of N pixels")
    p.add_argument("--cap", type=int, default=PARTITION_CAP)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=run_partitions)

    return parser


def main(argv=None) -> int:
    """Main entry point with argument parsing."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        success = args.func(args)
    except (argparse.ArgumentTypeError, InvalidInputError) as e:
        parser.error(str(e))
    except (DeadLeavesError, OSError) as e:
        print(f"\nError: {e}", file=sys.stderr)
        return 1
    return 0 if success else 1


if __name__ == "__main__":
    exit(main())
