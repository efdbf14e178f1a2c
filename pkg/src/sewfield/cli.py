"""Command-line entry point: ``sewfield <subcommand> ...``.

Every subcommand resolves its configuration as defaults < ``--config`` file <
flags and writes the resolved form next to its outputs.  Exit codes: 0 ok,
2 configuration error, 3 data error, 4 numerical failure.  Errors are a single
``sewfield: error[<category>]: <message>`` line on standard error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("sewfield")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags (``None`` flags are unset)."""
    resolved = dict(defaults)
    resolved["network"] = dict(defaults.get("network", {}))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        net = doc.pop("network", {})
        unknown = set(doc) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(doc)
        resolved["network"].update(net)
    for key in defaults:
        if key == "network":
            continue
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            resolved[key] = v
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        resolved["network"][k.strip()] = _parse_value(v)
    return resolved


def network_config(resolved: dict):
    from .nn import NetworkConfig

    net = dict(resolved.get("network", {}))
    if "seed" in resolved and "seed" not in net:
        net["seed"] = resolved["seed"]
    try:
        return NetworkConfig.from_dict(net)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid network config: {exc}") from None


def write_resolved(out_dir: Path, name: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.resolved.json").write_text(json.dumps(resolved, indent=2, sort_keys=True, default=str))


def _seed_everything(seed: int) -> None:
    import torch

    torch.manual_seed(int(seed))


def load_corpus(directory):
    from .io import load_pattern

    d = _need(directory, "corpus directory")
    manifest = d / "manifest.json"
    if manifest.exists():
        files = [d / e["file"] for e in json.loads(manifest.read_text())["patterns"]]
    else:
        files = sorted(d.glob("*.json"))
    if not files:
        raise DataError(f"no patterns in {d}")
    return [load_pattern(f) for f in files], [f.stem for f in files]


def _load_vae(path):
    from .vae import PanelVAE

    return _load(PanelVAE, path, "VAE")


def _load(cls, path, what):
    from .nn import CheckpointError

    p = _need(path, f"{what} checkpoint")
    try:
        return cls.load(p)
    except CheckpointError as exc:
        raise DataError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_pair(flow, vae) -> None:
    if flow.width_ != vae.cfg.latent_dim + 8:
        raise ConfigError(f"flow token width {flow.width_} does not match VAE latent size {vae.cfg.latent_dim}")


def _write_pattern(pattern, out_dir: Path, name: str, prediction=None) -> None:
    from .io import pattern_svg, save_pattern

    save_pattern(pattern, out_dir / f"{name}.json")
    (out_dir / f"{name}.svg").write_text(pattern_svg(pattern))
    if prediction is not None:
        (out_dir / f"{name}.stitches.json").write_text(prediction.to_json())


def _finish_pattern(pattern, stitcher):
    """Attach predicted stitches; returns (pattern, prediction)."""
    if stitcher is None or sum(p.n_edges for p in pattern.panels) < 2:
        return pattern, None
    pred = stitcher.predict_proba(pattern)
    return pattern.replace(stitches=tuple(pred.stitches)), pred


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args):
    from .corpus import FAMILIES, generate_corpus
    from .io import save_pattern

    resolved = resolve_config(args, {"seed": 0, "count": 100, "families": None, "network": {}})
    mix = None
    if resolved["families"]:
        mix = {}
        for item in str(resolved["families"]).split(","):
            name, _, w = item.partition(":")
            mix[name.strip()] = float(w) if w else 1.0
        bad = set(mix) - set(FAMILIES)
        if bad:
            raise ConfigError(f"unknown garment families {sorted(bad)}; choose from {list(FAMILIES)}")
    if int(resolved["count"]) <= 0:
        raise ConfigError("--count must be positive")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        pats, fams = generate_corpus(int(resolved["seed"]), int(resolved["count"]), mix, return_families=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    entries = []
    for k, (p, f) in enumerate(zip(pats, fams)):
        name = f"pattern_{k:05d}.json"
        save_pattern(p, out / name)
        entries.append({"file": name, "family": f, "panels": p.n_panels, "sha256": sha256(out / name)})
    manifest = {"seed": int(resolved["seed"]), "count": int(resolved["count"]), "families": mix, "patterns": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    write_resolved(out, "gen-data", resolved)
    print(json.dumps({"out_dir": str(out), "count": len(entries)}))


def cmd_train_vae(args):
    from .vae import PanelVAE

    resolved = resolve_config(args, {"corpus": None, "seed": 0, "network": {}})
    cfg = network_config(resolved)
    pats, _ = load_corpus(resolved["corpus"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)
    panels = [q for p in pats for q in p.panels]
    model = PanelVAE(cfg, log_path=out.with_suffix(".csv"), verbose=True).fit(panels)
    model.save(out, {"corpus_panels": len(panels)})
    write_resolved(out.parent, out.stem, resolved)
    print(json.dumps({"checkpoint": str(out), "panels": len(panels), "sha256": sha256(out)}))


def _token_corpus(pats, vae, conditional, raster_size):
    from .flow import rasterize_pattern, tokenize

    X = np.stack([tokenize(p, vae) for p in pats])
    C = np.stack([rasterize_pattern(p, raster_size) for p in pats]) if conditional else None
    return X, C


def cmd_train_flow(args):
    from .flow import PatternFlow

    resolved = resolve_config(args, {"corpus": None, "vae": None, "conditional": False, "seed": 0, "network": {}})
    cfg = network_config(resolved)
    vae = _load_vae(resolved["vae"])
    if vae.cfg.latent_dim != cfg.latent_dim:
        raise ConfigError("latent_dim in config differs from the VAE checkpoint")
    pats, _ = load_corpus(resolved["corpus"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)
    X, C = _token_corpus(pats, vae, resolved["conditional"], cfg.raster_size)
    flow = PatternFlow(cfg, conditional=bool(resolved["conditional"]), log_path=out.with_suffix(".csv"), verbose=True)
    flow.fit(X, C)
    flow.calibrate(condition=C[: 64] if C is not None else None, n=64 if C is None else min(64, len(C)))
    flow.save(out, {"vae_sha256": sha256(resolved["vae"])})
    write_resolved(out.parent, out.stem, resolved)
    print(json.dumps({"checkpoint": str(out), "patterns": len(pats), "tau": flow.tau_}))


def cmd_train_stitch(args):
    from .stitching import StitchPredictor

    resolved = resolve_config(args, {"corpus": None, "vae": None, "seed": 0, "network": {}})
    cfg = network_config(resolved)
    pats, _ = load_corpus(resolved["corpus"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)
    model = StitchPredictor(cfg, log_path=out.with_suffix(".csv"), verbose=True).fit(pats)
    model.save(out)
    write_resolved(out.parent, out.stem, resolved)
    print(json.dumps({"checkpoint": str(out), "patterns": len(pats)}))


def _models(resolved, need_flow=True):
    from .flow import PatternFlow
    from .stitching import StitchPredictor

    vae = _load_vae(resolved["vae"])
    flow = _load(PatternFlow, resolved["flow"], "flow") if need_flow else None
    if flow is not None:
        _check_pair(flow, vae)
        if flow.tau_ is None:
            raise ConfigError("flow checkpoint has no calibrated padding threshold")
    stitch = _load(StitchPredictor, resolved["stitch"], "stitch") if resolved.get("stitch") else None
    return vae, flow, stitch


def _provenance(resolved, extra=None) -> dict:
    out = {"config": resolved, "time": time.strftime("%Y-%m-%dT%H:%M:%S")}
    for key in ("flow", "vae", "stitch"):
        if resolved.get(key):
            out[f"{key}_sha256"] = sha256(resolved[key])
    out.update(extra or {})
    return out


def _decode(flow, vae, tokens):
    from .meshing import MeshingError
    from .pattern import PatternError

    try:
        return flow.decode(tokens, vae)
    except MeshingError as exc:
        raise NumericalError(f"meshing failed: {exc}") from None
    except PatternError as exc:
        raise NumericalError(f"decoded pattern invalid: {exc}") from None


def cmd_sample(args):
    from .pattern import is_valid

    resolved = resolve_config(args, {"flow": None, "vae": None, "stitch": None, "seed": 0, "n": 1, "steps": 50,
                                     "network": {}})
    vae, flow, stitch = _models(resolved)
    if flow.conditional:
        raise ConfigError("sample needs an unconditional flow checkpoint; use estimate for conditional ones")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed, n, steps = int(resolved["seed"]), int(resolved["n"]), int(resolved["steps"])
    _seed_everything(seed)
    tokens = flow.sample(n, seed=seed, steps=steps)
    summary = []
    for k in range(n):
        name = f"sample_{k:04d}"
        try:
            pattern = _decode(flow, vae, tokens[k])
        except NumericalError as exc:
            log.warning("%s: %s", name, exc)
            summary.append({"name": name, "ok": False, "error": str(exc)})
            continue
        pattern, pred = _finish_pattern(pattern, stitch)
        _write_pattern(pattern, out, name, pred)
        summary.append({"name": name, "ok": True, "valid": is_valid(pattern), "panels": pattern.n_panels})
    np.save(out / "tokens.npy", tokens)
    (out / "provenance.json").write_text(json.dumps(_provenance(resolved, {"seed": seed, "steps": steps}), indent=2))
    write_resolved(out, "sample", resolved)
    print(json.dumps({"out": str(out), "samples": summary}))
    if not any(s["ok"] for s in summary):
        raise NumericalError("no sample decoded to a pattern")


def cmd_estimate(args):
    from .flow import rasterize_pattern, raster_iou
    from .io import load_pattern

    resolved = resolve_config(args, {"flow": None, "vae": None, "stitch": None, "seed": 0, "steps": 50,
                                     "condition_pattern": None, "condition_raster": None, "network": {}})
    if bool(resolved["condition_pattern"]) == bool(resolved["condition_raster"]):
        raise ConfigError("give exactly one of --condition-pattern / --condition-raster")
    vae, flow, stitch = _models(resolved)
    if not flow.conditional:
        raise ConfigError("estimate needs a conditional flow checkpoint")
    if resolved["condition_pattern"]:
        raster = rasterize_pattern(load_pattern(_need(resolved["condition_pattern"], "condition pattern")),
                                   flow.cfg.raster_size)
    else:
        raster = np.load(_need(resolved["condition_raster"], "condition raster"))
        if raster.shape != (flow.cfg.raster_size,) * 2:
            raise DataError(f"condition raster must be {flow.cfg.raster_size}x{flow.cfg.raster_size}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed, steps = int(resolved["seed"]), int(resolved["steps"])
    _seed_everything(seed)
    tokens = flow.sample(1, seed=seed, steps=steps, condition=raster)[0]
    pattern, pred = _finish_pattern(_decode(flow, vae, tokens), stitch)
    _write_pattern(pattern, out, "estimate", pred)
    iou = raster_iou(raster, rasterize_pattern(pattern, flow.cfg.raster_size))
    report = {"raster_iou": iou, "panels": pattern.n_panels}
    (out / "report.json").write_text(json.dumps(report, indent=2))
    (out / "provenance.json").write_text(json.dumps(_provenance(resolved, {"seed": seed, "steps": steps}), indent=2))
    write_resolved(out, "estimate", resolved)
    print(json.dumps(report))


def cmd_complete(args):
    from .flow import tokenize
    from .io import load_pattern
    from .pattern import N_MAX

    resolved = resolve_config(args, {"flow": None, "vae": None, "stitch": None, "partial": None, "seed": 0,
                                     "steps": 50, "guidance_lr": 0.02, "guidance_iters": 10, "network": {}})
    vae, flow, stitch = _models(resolved)
    if flow.conditional:
        raise ConfigError("complete needs an unconditional flow checkpoint")
    partial = load_pattern(_need(resolved["partial"], "partial pattern"), check=False)
    m = partial.n_panels
    if not 1 <= m < N_MAX:
        raise DataError(f"partial pattern must hold between 1 and {N_MAX - 1} panels, got {m}")
    targets = tokenize(partial.replace(stitches=()), vae, n_rows=m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(resolved["seed"])
    _seed_everything(seed)
    tokens = flow.complete(targets, n=1, seed=seed, steps=int(resolved["steps"]),
                           guidance_lr=float(resolved["guidance_lr"]), guidance_iters=int(resolved["guidance_iters"]))[0]
    pattern, pred = _finish_pattern(_decode(flow, vae, tokens), stitch)
    _write_pattern(pattern, out, "completed", pred)
    extra = {"seed": seed, "steps": int(resolved["steps"]), "guidance_lr": float(resolved["guidance_lr"]),
             "guidance_iters": int(resolved["guidance_iters"]), "provided_panels": m}
    (out / "provenance.json").write_text(json.dumps(_provenance(resolved, extra), indent=2))
    write_resolved(out, "complete", resolved)
    print(json.dumps({"out": str(out), "panels": pattern.n_panels}))


def cmd_refit(args):
    import csv

    from .io import load_pattern, pattern_svg, save_pattern
    from .meshing import MeshingError
    from .refit import RefitTarget, chamfer_cm, refit, scaled_target, seam_mismatch

    resolved = resolve_config(args, {"pattern": None, "vae": None, "target_scale": None, "target_contours": None,
                                     "iters": 300, "seed": 0, "network": {}})
    if (resolved["target_scale"] is None) == (resolved["target_contours"] is None):
        raise ConfigError("give exactly one of --target-scale / --target-contours")
    vae = _load_vae(resolved["vae"])
    pattern = load_pattern(_need(resolved["pattern"], "pattern"))
    weights = {"lambda_c": vae.cfg.lambda_c, "lambda_l": vae.cfg.lambda_l, "lambda_s": vae.cfg.lambda_s}
    _seed_everything(int(resolved["seed"]))
    try:
        if resolved["target_scale"] is not None:
            f = resolved["target_scale"]
            f = f if isinstance(f, (int, float)) else [float(v) for v in f]
            target = scaled_target(pattern, vae, f, **weights)
        else:
            doc = json.loads(_need(resolved["target_contours"], "target contours").read_text())
            target = RefitTarget([np.asarray(c) for c in doc["contours"]], **weights)
        result = refit(pattern, target, vae, iters=int(resolved["iters"]))
    except MeshingError as exc:
        raise NumericalError(f"meshing failed: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad refit target: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pattern(pattern, out / "before.json")
    save_pattern(result.pattern, out / "after.json")
    overlay = {"source": [p.polyline * p.scale for p in pattern.panels], "target": target.contours,
               "refitted": [m.boundary_points * np.exp(s) for m, s in zip(result.meshes, result.log_scales)]}
    (out / "overlay.svg").write_text(overlay_svg(overlay))
    (out / "after.svg").write_text(pattern_svg(result.pattern))
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["iter", "loss", "chamfer", "laplacian", "seam"])
        w.writeheader()
        w.writerows(result.trace)
    mism = seam_mismatch(result.pattern)
    report = {"chamfer_cm": chamfer_cm(result, target).tolist(), "seam_mismatch_max": float(mism.max()) if len(mism) else 0.0,
              "failed_at": result.failed_at, "iterations": len(result.trace) - 1}
    (out / "report.json").write_text(json.dumps(report, indent=2))
    write_resolved(out, "refit", resolved)
    print(json.dumps(report))
    if result.failed_at is not None:
        raise NumericalError(f"refit stopped at iteration {result.failed_at}; last valid state written")


def overlay_svg(groups: dict, cell: float = 220.0) -> str:
    colours = {"source": "#999999", "target": "#e6194b", "refitted": "#4363d8"}
    n = len(next(iter(groups.values())))
    cols = min(n, 4)
    rows = (n + cols - 1) // cols
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{cols * cell}" height="{rows * cell}">']
    for k in range(n):
        allpts = np.vstack([np.asarray(g[k]) for g in groups.values()])
        c = allpts.mean(0)
        s = 0.45 * cell / max(np.abs(allpts - c).max(), 1e-9)
        ox, oy = (k % cols + 0.5) * cell, (k // cols + 0.5) * cell
        for name, g in groups.items():
            p = np.asarray(g[k])
            pts = " ".join(f"{ox + (x - c[0]) * s:.2f},{oy - (y - c[1]) * s:.2f}" for x, y in p)
            out.append(f'<polygon points="{pts}" fill="none" stroke="{colours.get(name, "#000")}" stroke-width="1"/>')
    out.append("</svg>")
    return "\n".join(out)


def cmd_eval(args):
    from .io import load_pattern
    from .metrics import evaluate

    resolved = resolve_config(args, {"pred_dir": None, "truth_dir": None, "pair_by_order": False, "network": {}})
    pd, td = _need(resolved["pred_dir"], "prediction directory"), _need(resolved["truth_dir"], "truth directory")
    pfiles = {f.stem: f for f in sorted(pd.glob("*.json")) if _is_pattern_file(f)}
    tfiles = {f.stem: f for f in sorted(td.glob("*.json")) if _is_pattern_file(f)}
    if resolved["pair_by_order"]:
        names = list(pfiles)[: len(tfiles)]
        pairs = list(zip(pfiles.values(), list(tfiles.values())[: len(names)]))
    else:
        names = sorted(set(pfiles) & set(tfiles))
        pairs = [(pfiles[n], tfiles[n]) for n in names]
    if not pairs:
        raise DataError("no prediction/truth pattern pairs found")
    preds = [load_pattern(a, check=False) for a, _ in pairs]
    truths = [load_pattern(b) for _, b in pairs]
    report = evaluate(preds, truths, names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.table())
    write_resolved(out, "eval", resolved)
    sys.stdout.write(report.table())


def _is_pattern_file(f: Path) -> bool:
    return not f.name.endswith((".resolved.json", ".stitches.json")) and f.name not in (
        "manifest.json", "provenance.json", "report.json")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sewfield", description="Implicit-field sewing pattern toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="network config override")
        if seed:
            p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("gen-data", help="generate a procedural pattern corpus"))
    p.add_argument("--count", type=int)
    p.add_argument("--families", help="comma list, optionally name:weight")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train-vae", help="train the panel VAE"))
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_vae)

    p = common(sub.add_parser("train-flow", help="train the pattern flow model"))
    p.add_argument("--corpus")
    p.add_argument("--vae")
    p.add_argument("--conditional", action="store_true", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_flow)

    p = common(sub.add_parser("train-stitch", help="train the stitch predictor"))
    p.add_argument("--corpus")
    p.add_argument("--vae")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_stitch)

    for name, func, helptext in (("sample", cmd_sample, "unconditional generation"),
                                 ("estimate", cmd_estimate, "raster-conditioned generation"),
                                 ("complete", cmd_complete, "guided completion of a partial pattern")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--flow")
        p.add_argument("--vae")
        p.add_argument("--stitch")
        p.add_argument("--steps", type=int)
        p.add_argument("--out", required=True)
        if name == "sample":
            p.add_argument("--n", type=int)
        if name == "estimate":
            p.add_argument("--condition-pattern")
            p.add_argument("--condition-raster")
        if name == "complete":
            p.add_argument("--partial")
            p.add_argument("--guidance-lr", type=float)
            p.add_argument("--guidance-iters", type=int)
        p.set_defaults(func=func)

    p = common(sub.add_parser("refit", help="refit panel shapes to target contours"))
    p.add_argument("--pattern")
    p.add_argument("--vae")
    p.add_argument("--target-scale", type=float, nargs="+")
    p.add_argument("--target-contours")
    p.add_argument("--iters", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refit)

    p = common(sub.add_parser("eval", help="compare predicted patterns to ground truth"), seed=False)
    p.add_argument("--pred-dir")
    p.add_argument("--truth-dir")
    p.add_argument("--pair-by-order", action="store_true", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return ap


def _category(exc) -> tuple[str, int]:
    from .meshing import MeshingError
    from .nn import CheckpointError
    from .pattern import PatternError
    from .vae import DivergenceError

    if isinstance(exc, ConfigError):
        return "config", EXIT_CONFIG
    if isinstance(exc, (NumericalError, FloatingPointError, DivergenceError, MeshingError)):
        return "numerical", EXIT_NUMERIC
    if isinstance(exc, (DataError, PatternError, CheckpointError, FileNotFoundError, json.JSONDecodeError)):
        return "data", EXIT_DATA
    return "", 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if getattr(args, "target_scale", None) is not None and len(args.target_scale) == 1:
        args.target_scale = args.target_scale[0]
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        cat, code = _category(exc)
        if not cat:
            raise
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        sys.stderr.write(f"sewfield: error[{cat}]: {msg}\n")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
