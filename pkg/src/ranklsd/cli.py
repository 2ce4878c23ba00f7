"""Command line entry point: ``ranklsd <command> ...``.

Exit codes: 0 success, 1 a check or acceptance bound failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .model.checkpoint import CheckpointError
from .config import ConfigError, RunConfig, apply_seed_env, config_hash, dump_sections, parse_value

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ORACLE_MIN_UPLIFT = 0.10


class UsageError(Exception):
    pass


def _print_header(command: str, text: str) -> None:
    print(f"# ranklsd {command} config-hash {config_hash(text)}")
    for line in text.splitlines():
        print(f"# {line}")
    sys.stdout.flush()


def _thresholds(raw: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as err:
        raise UsageError(f"bad thresholds {raw!r}") from err
    if not vals or any(v < 0 for v in vals):
        raise UsageError("thresholds must be non-negative numbers")
    return vals


def load_dataset_spec(path) -> tuple["SceneSpec", int, int]:
    """Dataset manifest: SceneSpec fields plus ``count`` and ``start``, one ``key = value`` per line.

    Keys may carry a ``data.`` prefix so a run config's data section can be reused.
    """
    from .synthdata import SceneSpec

    defaults = SceneSpec()
    known = dict(defaults.__dict__)
    values: dict = {}
    count, start = 100, 0
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key[5:] if key.startswith("data.") else key
        if key == "count":
            count = int(val)
        elif key == "start":
            start = int(val)
        elif key in known:
            values[key] = parse_value(val, known[key], key)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown dataset key {key!r}")
    try:
        spec = SceneSpec(**{**known, **values})
    except ValueError as err:
        raise ConfigError(str(err)) from err
    if count < 1 or start < 0:
        raise ConfigError("count must be >= 1 and start >= 0")
    return spec, count, start


def _spec_text(spec, count: int, start: int) -> str:
    return dump_sections({"data": spec}) + f"data.count = {count}\ndata.start = {start}\n"


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    from .pipeline import evaluate_model, scene_spec, train

    cfg = RunConfig.load(args.config) if args.config else apply_seed_env(RunConfig())
    if args.steps is not None:
        cfg = cfg.with_overrides(optim__steps=args.steps)
    if args.out:
        cfg = cfg.with_overrides(run__out_dir=args.out)
    _print_header("train", cfg.to_text())
    out = Path(cfg.run.out_dir)
    every = max(1, cfg.run.log_every)

    def on_step(row):
        if row["step"] % every == 0 or row["step"] == cfg.optim.steps - 1:
            parts = " ".join(f"{k}={row[k]:.5g}" for k in ("rank", "conf", "pos", "junc", "edge", "total"))
            print(f"step {row['step']} {parts} lr={row['lr']:.3g}", flush=True)

    res = train(cfg, out, resume=args.resume, on_step=on_step)
    print(f"trained {cfg.optim.steps} steps in {res.seconds:.1f}s; checkpoints in {out}")
    if args.eval and cfg.run.eval_scenes > 0:
        run = evaluate_model(res.model, scene_spec(cfg, cfg.run.eval_seed), cfg.run.eval_scenes,
                             det=cfg.detect, w=cfg.rerank)
        (out / "eval.csv").write_text(run.result.to_csv(f"config-hash {cfg.hash()}"))
        for t in run.result.thresholds:
            print(f"sAP{t:g}={run.result.sap[t]:.4f} sF{t:g}={run.result.sf[t]:.4f}")
    return EXIT_OK


def _read_predictions(path, count: int, start: int):
    """Segment text file with ``# scene N`` markers; scenes without a block have no predictions."""
    from .geometry import parse_segments

    blocks: dict[int, list[str]] = {}
    cur = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        s = raw.strip()
        if s.startswith("# scene"):
            cur = int(s.split()[2])
            blocks.setdefault(cur, [])
        elif cur is not None:
            blocks[cur].append(raw)
        elif s and not s.startswith("#"):
            raise ConfigError("prediction lines must follow a '# scene N' marker")
    out = {}
    for idx, lines in blocks.items():
        segs, scores = parse_segments("\n".join(lines))
        if segs and scores is None:
            raise ConfigError(f"scene {idx}: predictions need scores")
        out[idx] = (segs, scores or [])
    return out


def cmd_eval(args) -> int:
    from .metrics import ImagePredictions, evaluate
    from .pipeline import evaluate_model, load_model
    from .synthdata import generate

    thresholds = _thresholds(args.thresholds)
    spec, count, start = load_dataset_spec(args.spec)
    if (args.ckpt is None) == (args.preds is None):
        raise UsageError("give exactly one of --ckpt or --preds")
    if args.ckpt is not None:
        model, cfg = load_model(args.ckpt)
        header = cfg.to_text() + _spec_text(spec, count, start)
        _print_header("eval", header)
        if start:
            from .pipeline import eval_images

            images, _ = eval_images(model, spec, count, start, cfg.detect, cfg.rerank)
            result = evaluate(images, thresholds)
        else:
            result = evaluate_model(model, spec, count, thresholds, cfg.detect, cfg.rerank).result
    else:
        header = _spec_text(spec, count, start)
        _print_header("eval", header)
        preds = _read_predictions(args.preds, count, start)
        images = []
        for i in range(start, start + count):
            segs, scores = preds.get(i, ([], []))
            images.append(ImagePredictions.build(segs, generate(spec, i).gts, scores))
        result = evaluate(images, thresholds)
    comment = f"config-hash {config_hash(header)}"
    csv_text = result.to_csv(comment)
    print(csv_text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(csv_text)
        for t in result.thresholds:
            (out / f"pr_{t:g}.csv").write_text(result.curve_csv(t, comment))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    scopes = ["op", "loss", "end2end"] if args.scope == "all" else [args.scope]
    text = f"gradcheck.scope = {args.scope}\ngradcheck.cases = {args.cases}\ngradcheck.seed = {args.seed}\n" \
           f"gradcheck.step = {gradcheck.STEP!r}\n"
    _print_header("gradcheck", text)
    ok = True
    for s in scopes:
        rep = gradcheck.run(s, args.cases, args.seed)
        for line in rep.lines():
            print(line)
        ok = ok and rep.ok
    print("gradcheck", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def oracle_pools(spec, count: int, start: int, dup: int, noise: float, seed: int):
    from .synthdata import generate, perturb_candidates

    pools, gts = [], []
    for i in range(start, start + count):
        s = generate(spec, i)
        pools.append(perturb_candidates(s.gts, [seed, i], dup, noise))
        gts.append(s.gts)
    return pools, gts


def cmd_oracle(args) -> int:
    from .metrics import oracle_rerank_experiment
    from .rerank import RerankWeights

    spec, count, start = load_dataset_spec(args.spec) if args.spec else (None, args.count, 0)
    if spec is None:
        from .synthdata import SceneSpec

        spec = SceneSpec()
    count = args.count if args.count is not None else count
    w = RerankWeights(args.delta_e, args.delta_d, args.delta_l, args.samples)
    text = _spec_text(spec, count, start) + dump_sections({"rerank": w}) + \
        f"oracle.dup_factor = {args.dup}\noracle.noise_px = {args.noise!r}\noracle.seed = {args.seed}\n" \
        f"oracle.threshold = {args.threshold!r}\noracle.resolution = {args.resolution}\n"
    _print_header("oracle", text)
    pools, gts = oracle_pools(spec, count, start, args.dup, args.noise, args.seed)
    before, after = oracle_rerank_experiment(pools, gts, w, args.threshold, args.resolution)
    rows = [f"# config-hash {config_hash(text)}", "ordering,sAP", f"confidence,{before:.6f}",
            f"rerank_gt,{after:.6f}", f"uplift,{after - before:.6f}"]
    print("\n".join(rows))
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")
    return EXIT_OK if after - before >= ORACLE_MIN_UPLIFT else EXIT_FAIL


def cmd_demo(args) -> int:
    from .inference import detect, segments_text, svg_overlay
    from .pipeline import load_model, scene_spec
    from .synthdata import generate

    model, cfg = load_model(args.ckpt)
    if args.spec:
        spec, _, _ = load_dataset_spec(args.spec)
    else:
        spec = scene_spec(cfg, cfg.run.eval_seed)
    header = cfg.to_text() + _spec_text(spec, 1, args.index)
    _print_header("demo", header)
    s = generate(spec, args.index)
    det = detect(s.image, model, cfg.detect, cfg.rerank)
    top = min(args.top, len(det))
    comment = f"config-hash {config_hash(header)} scene {args.index}"
    Path(args.out).write_text(svg_overlay(s.image.data, det.segs[:top], s.gts, det.scores[:top], comment=comment))
    txt = Path(args.out).with_suffix(".txt")
    txt.write_text(segments_text(det, comment))
    print(f"wrote {args.out} and {txt} ({len(det)} detections, {len(s.gts)} gts)")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .geometry import format_segments
    from .gtmaps import to_pgm
    from .synthdata import generate

    spec, count, start = load_dataset_spec(args.spec)
    header = _spec_text(spec, count, start)
    _print_header("generate", header)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    comment = f"config-hash {config_hash(header)}"
    for i in range(start, start + count):
        s = generate(spec, i)
        (out / f"scene_{i:05d}.pgm").write_bytes(to_pgm(s.image.data[0], comment))
        (out / f"scene_{i:05d}.txt").write_text(format_segments(s.gts, None, comment))
    print(f"wrote {count} scenes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with code 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ranklsd", description="Toy line segment detector with geometric re-ranking.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", help="run config file (section.key = value)")
    t.add_argument("--steps", type=int, help="override optim.steps")
    t.add_argument("--out", help="override run.out_dir")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--no-eval", dest="eval", action="store_false", help="skip the held-out evaluation")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    e.add_argument("--ckpt")
    e.add_argument("--preds", help="segment text with '# scene N' blocks")
    e.add_argument("--spec", required=True, help="dataset manifest")
    e.add_argument("--thresholds", default="5,10,15")
    e.add_argument("--out", help="directory for eval.csv and per-threshold PR curves")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--scope", choices=["op", "loss", "end2end", "all"], default="all")
    g.add_argument("--cases", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    o = sub.add_parser("oracle", help="re-ranking with ground-truth maps vs confidence ordering")
    o.add_argument("--spec", help="dataset manifest (default: desk scene spec)")
    o.add_argument("--count", type=int, default=None, help="number of scenes (default: manifest count or 200)")
    o.add_argument("--delta-e", type=float, default=0.5)
    o.add_argument("--delta-d", type=float, default=0.5)
    o.add_argument("--delta-l", type=float, default=0.5)
    o.add_argument("--samples", type=int, default=32)
    o.add_argument("--dup", type=int, default=4)
    o.add_argument("--noise", type=float, default=6.0)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--threshold", type=float, default=10.0)
    o.add_argument("--resolution", type=int, default=128)
    o.add_argument("--out", help="write the CSV here too")
    o.set_defaults(func=cmd_oracle, count_default=200)

    d = sub.add_parser("demo", help="SVG overlay of detections for one scene")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--index", type=int, default=0)
    d.add_argument("--out", required=True)
    d.add_argument("--spec", help="dataset manifest (default: the run's held-out spec)")
    d.add_argument("--top", type=int, default=20, help="detections drawn")
    d.set_defaults(func=cmd_demo)

    s = sub.add_parser("generate", help="export synthetic scenes as PGM images and segment text")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) == "oracle" and args.count is None and not args.spec:
            args.count = args.count_default
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return args.func(args)
    except UsageError as err:
        print(f"ranklsd: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, FileNotFoundError, IsADirectoryError) as err:
        print(f"ranklsd: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
