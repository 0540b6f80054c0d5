"""Command-line interface.

Settings come from built-in defaults, then an optional ``key=value`` config
file (``--config``), then command-line flags.  Every output file starts
with a comment recording the command, a hash of the resolved settings and
the seed.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
Failures print one line ``error code=<n> kind=<kind> message=<text>`` to
stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import formats
from .classify import loocv, mkda_nbc, predict_type
from .evalx import chain_scalars, default_radii, gelman_rubin, ppc_check
from .geometry import BoxWindow, Ellipsoid, GeometryError, MaskWindow, SubBox, make_grid
from .mcmc import ChainConfig, IndependentChains, NumericError, posterior_intensity, rng_stream, run_chain
from .moments import MomentParams, count_cov_between, count_cov_within, count_mean, population_intensity, region_correlation
from .procgen import DataError, sample_hpgrf, table1_config, thomas_dataset
from .study import REGION_NAMES, StudyConfig, format_table, run_study

log = logging.getLogger("hpgrf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PRESETS = {"table1"}


class ConfigError(ValueError):
    pass


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# name -> (type, default, help)
OPTIONS = {
    "seed": (int, 0, "random seed"),
    "out": (str, None, "output file or directory"),
    "window": (str, "box:0,0,100,100", "box:lo1,lo2[,lo3],hi1,hi2[,hi3]"),
    "mask": (str, None, "MASK file defining the window (overrides --window)"),
    "foci": (str, None, "FOCI file"),
    "fit": (str, None, "fit directory written by `fit`"),
    "fits": (str, None, "comma-separated fit directories"),
    "model": (str, "hpgrf", "hpgrf | ipgrf (simulate: thomas | hpgrf)"),
    "preset": (str, "table1", "Thomas preset for simulate"),
    "studies": (int, 10, "studies per type"),
    "types": (int, 3, "number of types for HPGRF simulation"),
    "M": (int, 2000, "number of retained jumps"),
    "burn_in": (int, 1000, "burn-in sweeps"),
    "iterations": (int, 3000, "total sweeps"),
    "thin": (int, 10, "thinning interval"),
    "alpha": (float, None, "total base-measure mass alpha(B)"),
    "beta": (float, 1.0, "parent rate (simulate)"),
    "tau": (float, 1.0, "child rate (simulate)"),
    "sigma2": (str, "25", "kernel variance(s), comma-separated"),
    "hyper_repeats": (int, 3, "extra passes over the hyperparameter block"),
    "adapt": (_bool, True, "adapt proposal steps during burn-in"),
    "spacing": (float, 1.0, "grid spacing in mm"),
    "long_csv": (_bool, False, "also write a long-form CSV of the grids"),
    "regions": (str, None, "regions file"),
    "radii": (str, None, "comma-separated L-function radii"),
    "sigma_scale": (float, 1.0, "kernel width multiplier for the check"),
    "max_snapshots": (int, 200, "snapshots used by ppc"),
    "method": (str, "hpgrf", "hpgrf | ipgrf | mkda-nbc"),
    "mode": (str, "loocv", "loocv | predict"),
    "query": (str, None, "FOCI file of studies to classify"),
    "radius": (float, 10.0, "MKDA kernel radius in mm"),
    "priors": (str, None, "comma-separated prior type probabilities"),
    "replicates": (int, 50, "simulation-study replicates"),
}

COMMANDS = {
    "simulate": ["seed", "out", "window", "mask", "model", "preset", "studies", "types", "M", "alpha", "beta", "tau", "sigma2"],
    "fit": ["seed", "out", "window", "mask", "foci", "model", "M", "burn_in", "iterations", "thin", "alpha", "hyper_repeats", "adapt"],
    "intensity": ["seed", "out", "fit", "spacing", "long_csv"],
    "moments": ["seed", "out", "fit", "regions", "spacing"],
    "ppc": ["seed", "out", "fit", "foci", "radii", "sigma_scale", "max_snapshots"],
    "diag": ["seed", "out", "fits"],
    "classify": ["seed", "out", "foci", "fit", "method", "mode", "query", "radius", "priors", "spacing"],
    "study": ["seed", "out", "replicates", "studies", "M", "burn_in", "iterations", "thin", "spacing"],
}

STUDY_DEFAULTS = {"iterations": 2000, "burn_in": 1000, "thin": 5}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hpgrf", description="Hierarchical Poisson/gamma random field models for multi-type point patterns.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, keys in COMMANDS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="key=value settings file (or a preset name for simulate)")
        for k in keys:
            _, _, helptext = OPTIONS[k]
            sp.add_argument("--" + k.replace("_", "-"), dest=k, default=None, help=helptext)
    return p


def read_config_file(path: str) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"config line {no}: expected key=value")
        k, v = (t.strip() for t in s.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(command: str, flags: dict) -> dict:
    """Defaults < config file < flags, converted to their declared types."""
    keys = COMMANDS[command]
    raw = {k: OPTIONS[k][1] for k in keys}
    if command == "study":
        raw.update(STUDY_DEFAULTS)
    cfg_path = flags.get("config")
    if cfg_path is not None:
        if command == "simulate" and cfg_path in PRESETS and not os.path.exists(cfg_path):
            raw["preset"] = cfg_path
        else:
            filed = read_config_file(cfg_path)
            unknown = sorted(set(filed) - set(keys))
            if unknown:
                raise ConfigError(f"unknown setting(s) for {command}: {', '.join(unknown)}")
            raw.update(filed)
    raw.update({k: v for k, v in flags.items() if k in keys and v is not None})
    out = {}
    for k in keys:
        v = raw[k]
        if v is None:
            out[k] = None
            continue
        try:
            out[k] = OPTIONS[k][0](v)
        except (TypeError, ValueError):
            raise ConfigError(f"invalid value for {k}: {v!r}") from None
    return out


INPUT_KEYS = ("foci", "mask", "fit", "fits", "regions", "query")


def _content_digest(path: str) -> str:
    """Digest of a file, or of every file under a directory; the path itself if missing."""
    p = Path(path)
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p] if p.is_file() else []
    if not files:
        return path
    h = hashlib.sha256()
    for q in files:
        h.update(q.relative_to(p).as_posix().encode() if p.is_dir() else b"")
        h.update(q.read_bytes())
    return h.hexdigest()


def config_hash(command: str, settings: dict) -> str:
    """Hash of the resolved settings with inputs identified by content.

    The output location is left out, so a rerun elsewhere gives identical bytes.
    """
    parts = []
    for k in sorted(settings):
        v = settings[k]
        if k == "out":
            continue
        if k in INPUT_KEYS and v is not None:
            v = ",".join(_content_digest(x) for x in str(v).split(","))
        parts.append(f"{k}={v}")
    text = command + "\n" + "\n".join(parts)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _header(command: str, settings: dict) -> str:
    return f"hpgrf {command} config={config_hash(command, settings)} seed={settings.get('seed', 0)}"


def _require(settings: dict, *keys):
    for k in keys:
        if settings.get(k) is None:
            raise ConfigError(f"missing required setting: {k}")


def _floats(text: str, what: str) -> list:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise ConfigError(f"invalid {what}: {text!r}") from None


def make_window(settings: dict):
    if settings.get("mask"):
        try:
            return formats.read_mask(settings["mask"])
        except OSError as e:
            raise ConfigError(f"cannot read mask {settings['mask']}: {e.strerror}") from None
    spec = settings.get("window") or "box:0,0,100,100"
    kind, _, nums = spec.partition(":")
    if kind != "box":
        raise ConfigError(f"unknown window kind {kind!r}")
    v = _floats(nums, "window")
    if len(v) not in (4, 6):
        raise ConfigError("box window needs 4 (2D) or 6 (3D) numbers")
    h = len(v) // 2
    try:
        return BoxWindow(v[:h], v[h:])
    except GeometryError as e:
        raise ConfigError(str(e)) from None


def _out_dir(settings: dict) -> Path:
    _require(settings, "out")
    d = Path(settings["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_foci(path: str, window, labels=None):
    try:
        return formats.read_foci(path, window, labels)
    except OSError as e:
        raise ConfigError(f"cannot read foci file {path}: {e.strerror}") from None


# ---------------------------------------------------------------- fit directories


def save_fit(fit, directory: Path, settings: dict, header: str, mask_path: str | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    meta = [
        f"model={'ipgrf' if not fit.shared else 'hpgrf'}",
        f"labels={','.join(fit.labels)}",
        f"window={settings.get('window')}",
        f"mask={'window.mask' if mask_path else ''}",
    ]
    (directory / "fit.meta").write_text(f"# {header}\n" + "\n".join(meta) + "\n")
    if mask_path:
        formats.write_mask(fit.window, directory / "window.mask", header)
    parts = fit.chains if not fit.shared else [fit]
    for ch in parts:
        tag = f"_{ch.labels[0]}" if not fit.shared else ""
        formats.write_snapshots(ch, directory / f"snapshots{tag}.txt", header)
        formats.write_trace(ch, directory / f"trace{tag}.csv", header)


def load_fit(directory: str):
    d = Path(directory)
    meta_path = d / "fit.meta"
    if not meta_path.exists():
        raise ConfigError(f"not a fit directory: {directory}")
    meta = {}
    for raw in meta_path.read_text().splitlines():
        if raw.startswith("#") or "=" not in raw:
            continue
        k, v = raw.split("=", 1)
        meta[k] = v
    window = formats.read_mask(d / meta["mask"]) if meta.get("mask") else make_window({"window": meta["window"]})
    labels = meta["labels"].split(",")
    if meta["model"] == "hpgrf":
        return formats.read_snapshots(d / "snapshots.txt", window, d / "trace.csv", "hpgrf")
    chains = [
        formats.read_snapshots(d / f"snapshots_{lab}.txt", window, d / f"trace_{lab}.csv", "ipgrf") for lab in labels
    ]
    return IndependentChains(chains, labels, window)


# ---------------------------------------------------------------- commands


def cmd_simulate(s: dict) -> None:
    _require(s, "out")
    window = make_window(s)
    header = _header("simulate", s)
    rng = rng_stream(s["seed"], 0)
    if s["model"] == "thomas":
        if s["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {s['preset']!r}")
        if window.dim != 2:
            raise ConfigError("the table1 preset is two-dimensional")
        ds = thomas_dataset(table1_config(), s["studies"], window, rng)
        formats.write_foci(ds, s["out"], header)
    elif s["model"] == "hpgrf":
        J = s["types"]
        sig = _floats(s["sigma2"], "sigma2")
        alpha = s["alpha"] if s["alpha"] is not None else window.volume() / 10.0**window.dim
        ds, jumps = sample_hpgrf(window, [s["studies"]] * J, alpha, s["beta"], s["tau"], sig if len(sig) > 1 else sig[0], s["M"], rng)
        formats.write_foci(ds, s["out"], header)
        formats.write_jumps(jumps, str(s["out"]) + ".jumps", header)
    else:
        raise ConfigError(f"unknown simulation model {s['model']!r}")


def _chain_config(s: dict) -> ChainConfig:
    try:
        return ChainConfig(
            M=s["M"], burn_in=s["burn_in"], iterations=s["iterations"], thin=s["thin"],
            alpha_total=s["alpha"], hyper_repeats=s["hyper_repeats"], adapt=s["adapt"], seed=s["seed"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_fit(s: dict) -> None:
    _require(s, "foci", "out")
    window = make_window(s)
    ds = _read_foci(s["foci"], window)
    cc = _chain_config(s)
    if s["model"] not in ("hpgrf", "ipgrf"):
        raise ConfigError(f"unknown model {s['model']!r}")

    def progress(it, smp):
        if (it + 1) % 100 == 0:
            log.info("sweep %d/%d", it + 1, cc.iterations)

    fit = run_chain(ds, cc, model=s["model"], progress=progress)
    save_fit(fit, _out_dir(s), s, _header("fit", s), s.get("mask"))


def cmd_intensity(s: dict) -> None:
    _require(s, "fit")
    fit = load_fit(s["fit"])
    out = _out_dir(s)
    header = _header("intensity", s)
    grid = make_grid(fit.window, s["spacing"])
    grids = [posterior_intensity(fit, grid, j) for j in range(fit.J)]
    grids.append(population_intensity(fit, grid))
    for ig in grids:
        formats.write_grid(ig, out / f"{ig.label}.grid", header)
    if s["long_csv"]:
        axes = ["x", "y", "z"][: grid.dim]
        lines = [",".join(axes + ["label", "intensity"])]
        pts = grid.points
        for ig in grids:
            vals = ig.values[grid.inside]
            for p, v in zip(pts, vals):
                lines.append(",".join([*map(formats.fmt, p), ig.label, formats.fmt(v)]))
        (out / "intensity_long.csv").write_text(f"# {header}\n" + "\n".join(lines) + "\n")


def read_regions(path: str, window) -> list:
    """Regions file: ``label box lo.. hi..`` or ``label ellipsoid c.. cov(row-major) [level]``."""
    regions = []
    d = window.dim
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read regions file {path}: {e.strerror}") from None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].split()
        if not s:
            continue
        if len(s) < 2:
            raise DataError(f"regions line {no}: malformed row")
        label, kind, nums = s[0], s[1], s[2:]
        try:
            v = [float(x) for x in nums]
        except ValueError:
            raise DataError(f"regions line {no}: malformed row") from None
        if kind == "box" and len(v) == 2 * d:
            regions.append(SubBox(label, window, v[:d], v[d:]))
        elif kind == "ellipsoid" and len(v) in (d + d * d, d + d * d + 1):
            level = v[d + d * d] if len(v) > d + d * d else 0.95
            regions.append(Ellipsoid(label, window, v[:d], np.array(v[d : d + d * d]).reshape(d, d), level))
        else:
            raise DataError(f"regions line {no}: unknown region kind or wrong number of values")
    if not regions:
        raise DataError("regions file is empty")
    return regions


def cmd_moments(s: dict) -> None:
    """Count moments at the posterior-mean hyperparameters plus plug-in correlations."""
    _require(s, "fit", "out")
    fit = load_fit(s["fit"])
    header = _header("moments", s)
    regions = read_regions(s["regions"], fit.window) if s["regions"] else [SubBox("window", fit.window, fit.window.lo, fit.window.hi)]
    spacing = s["spacing"] if s["spacing"] != OPTIONS["spacing"][1] else None
    lines = ["kind,region_a,region_b,type_a,type_b,value,lo95,hi95"]
    parts = fit.chains if not fit.shared else [fit]
    for ci, ch in enumerate(parts):
        params = MomentParams(float(ch.tau.mean()), float(ch.beta.mean()), ch.alpha_total, ch.sigma2.mean(axis=0), fit.window)
        for jj in range(ch.J):
            lab = ch.labels[jj]
            for a in regions:
                lines.append(f"mean,{a.label},,{lab},,{formats.fmt(count_mean(a, jj, params, spacing))},,")
            for ia, a in enumerate(regions):
                for b in regions[ia:]:
                    v = count_cov_within(a, b, jj, params, spacing)
                    lines.append(f"cov,{a.label},{b.label},{lab},{lab},{formats.fmt(v)},,")
        if fit.shared:
            for jj in range(ch.J):
                for kk in range(jj + 1, ch.J):
                    for a in regions:
                        v = count_cov_between(a, a, jj, kk, params, spacing)
                        lines.append(f"cov,{a.label},{a.label},{ch.labels[jj]},{ch.labels[kk]},{formats.fmt(v)},,")
    for j in range(fit.J):
        for k in range(j + 1, fit.J):
            for a in regions:
                c = region_correlation(fit, a, j, k, spacing)
                lines.append(
                    f"corr,{a.label},{a.label},{fit.labels[j]},{fit.labels[k]},"
                    f"{formats.fmt(c['mean'])},{formats.fmt(c['lo95'])},{formats.fmt(c['hi95'])}"
                )
    Path(s["out"]).write_text(f"# {header}\n" + "\n".join(lines) + "\n")


def cmd_ppc(s: dict) -> None:
    _require(s, "fit", "foci", "out")
    fit = load_fit(s["fit"])
    ds = _read_foci(s["foci"], fit.window, fit.labels)
    ds.labels = list(fit.labels)
    radii = np.array(_floats(s["radii"], "radii")) if s["radii"] else default_radii(fit.window)
    curves = ppc_check(fit, ds, radii, rng_stream(s["seed"], 0), s["max_snapshots"], s["sigma_scale"])
    lines = ["study_id,type,fail_fraction,good_fit"]
    for c in curves:
        lines.append(f"{c.study_id},{c.type},{formats.fmt(c.fail_fraction)},{int(c.good_fit)}")
    good = sum(c.good_fit for c in curves)
    lines.append(f"# good_fit {good}/{len(curves)}")
    Path(s["out"]).write_text(f"# {_header('ppc', s)}\n" + "\n".join(lines) + "\n")


def cmd_diag(s: dict) -> None:
    _require(s, "fits", "out")
    dirs = [d for d in s["fits"].split(",") if d]
    if len(dirs) < 2:
        raise ConfigError("diag needs at least two fit directories")
    fits = [load_fit(d) for d in dirs]
    mats = [chain_scalars(f)[0] for f in fits]
    names = chain_scalars(fits[0])[1]
    n = min(m.shape[0] for m in mats)
    rep = gelman_rubin([m[:n] for m in mats], names)
    lines = ["name,psrf"] + [f"{nm},{formats.fmt(v)}" for nm, v in zip(rep.names, rep.psrf)]
    lines.append(f"MPSRF,{formats.fmt(rep.mpsrf)}")
    for k, v in sorted(rep.flags.items()):
        lines.append(f"# flag {k}={v}")
    Path(s["out"]).write_text(f"# {_header('diag', s)}\n" + "\n".join(lines) + "\n")


def cmd_classify(s: dict) -> None:
    _require(s, "foci", "out")
    method, mode = s["method"], s["mode"]
    if method not in ("hpgrf", "ipgrf", "mkda-nbc") or mode not in ("loocv", "predict"):
        raise ConfigError("method must be hpgrf|ipgrf|mkda-nbc and mode loocv|predict")
    priors = _floats(s["priors"], "priors") if s["priors"] else None
    lines = ["study_id,true_type,predicted,probabilities"]
    if method == "mkda-nbc":
        window = make_window(s) if not s.get("fit") else load_fit(s["fit"]).window
        ds = _read_foci(s["foci"], window)
        grid = make_grid(window, 4.0 if s["spacing"] == OPTIONS["spacing"][1] else s["spacing"])
        model, res = mkda_nbc(ds, grid, s["radius"], priors)
        if mode == "predict":
            from .classify import binary_map, _posterior

            _require(s, "query")
            q = _read_foci(s["query"], window)
            rows = []
            for p in q.patterns:
                post = _posterior(model.log_posterior(binary_map(p.points, grid, s["radius"])), np.ones(ds.J), model.labels)
                rows.append((p.study_id, p.type, post.label, post.probs, float("nan")))
            res.rows = rows
    else:
        _require(s, "fit")
        fit = load_fit(s["fit"])
        if (method == "hpgrf") != fit.shared:
            raise ConfigError(f"fit directory holds a {'hpgrf' if fit.shared else 'ipgrf'} fit")
        ds = _read_foci(s["foci"], fit.window, fit.labels)
        ds.labels = list(fit.labels)
        if mode == "loocv":
            res = loocv(ds, fit, priors)
        else:
            _require(s, "query")
            q = _read_foci(s["query"], fit.window)
            rows = []
            for p in q.patterns:
                post = predict_type(p, fit, priors)
                rows.append((p.study_id, p.type, post.label, post.probs, float("nan")))
            res = None
            lines += [f"{r[0]},{r[1]},{r[2]},{' '.join(formats.fmt(x) for x in r[3])}" for r in rows]
    if res is not None:
        lines += [f"{r[0]},{r[1]},{r[2]},{' '.join(formats.fmt(x) for x in r[3])}" for r in res.rows]
        if mode == "loocv":
            lines.append("# confusion " + ";".join(" ".join(str(int(c)) for c in row) for row in res.confusion))
            lines.append(f"# accuracy {formats.fmt(res.accuracy)}")
    Path(s["out"]).write_text(f"# {_header('classify', s)}\n" + "\n".join(lines) + "\n")


def cmd_study(s: dict) -> None:
    out = _out_dir(s)
    header = _header("study", s)
    try:
        cfg = StudyConfig(
            replicates=s["replicates"], n_per_type=s["studies"], M=s["M"], iterations=s["iterations"],
            burn_in=s["burn_in"], thin=s["thin"], spacing=s["spacing"], seed=s["seed"],
        )
        cfg.chain_config(0)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    def progress(k, rep):
        log.info("replicate %d/%d done (%.0f s)", k + 1, cfg.replicates, rep.seconds)

    res = run_study(cfg, progress)
    (out / "table.csv").write_text(f"# {header}\n" + format_table(res) + "\n")
    lines = ["replicate,region,imse_hpgrf,imse_ipgrf,iwmse_hpgrf,iwmse_ipgrf"]
    for r in res.replicates:
        for ri, name in enumerate(REGION_NAMES):
            vals = [r.imse[ri, 0], r.imse[ri, 1], r.iwmse[ri, 0], r.iwmse[ri, 1]]
            lines.append(f"{r.index},{name}," + ",".join(formats.fmt(v) for v in vals))
    (out / "replicates.csv").write_text(f"# {header}\n" + "\n".join(lines) + "\n")


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "intensity": cmd_intensity,
    "moments": cmd_moments,
    "ppc": cmd_ppc,
    "diag": cmd_diag,
    "classify": cmd_classify,
    "study": cmd_study,
}


def _fail(code: int, kind: str, msg: str) -> int:
    msg = " ".join(str(msg).split())
    print(f"error code={code} kind={kind} message={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else _fail(EXIT_CONFIG, "config", "invalid command line")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        settings = resolve(args.command, vars(args))
        HANDLERS[args.command](settings)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", e)
    except (DataError, GeometryError) as e:
        return _fail(EXIT_DATA, "data", e)
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as e:
        return _fail(EXIT_NUMERIC, "numeric", e)
    except (OSError, ValueError) as e:
        return _fail(EXIT_CONFIG, "config", e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
