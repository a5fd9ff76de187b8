"""Command-line front end.

Every command reads a YAML mapping (see README for the schema), applies
command-line overrides, runs one study and writes its data files followed
by ``manifest.json``. The manifest lists each data file with its SHA-256
digest and is written last, so its presence marks a complete run.

Exit codes: 0 ok, 2 configuration, 3 grid truncation, 4 fit failure,
5 input/output, 1 anything else raised by the simulator. A time series
whose power-law fit fails for some SE probability still writes all files
(the fit is recorded as null) and then exits with 4.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .ensemble import EnsembleConfig, run_ensemble
from .errors import AokrError, ConfigError, FitError
from .evolution import TALBOT, EventLog, WalkConfig, se_rate_from_physical
from .qstate import BlochAngles, coin_from_bloch, named_coin
from .scan import BlochScanSpec, scan_bloch_grid, sweep_pse, time_series

__all__ = ["RunConfig", "RunManifest", "parse_config", "main"]

EXIT_OK = 0
EXIT_IO = 5

COMMANDS = ("walk", "scan", "sweep", "timeseries")

# documented defaults, echoed into every manifest
WALK_DEFAULTS = {
    "k": 1.45,
    "tau_p": 0.005,
    "h": 10,
    "talbot": TALBOT,
    "p_se": 0.0,
    "se_enabled": True,
    "beta0": 0.0,
    "n_max": 128,
    "edge_margin": 8,
    "init_coin": "Y",
    "init_kick": True,
}
ENSEMBLE_DEFAULTS = {"n_trajectories": 1000, "n_beta_samples": 1, "beta_fwhm": 0.0, "seed": 0}

_FLOAT_KEYS = {"k", "tau_p", "talbot", "p_se", "beta0", "beta_fwhm", "gamma", "alpha", "chi"}
_INT_KEYS = {"T", "J", "h", "n_max", "edge_margin", "n_trajectories", "n_beta_samples", "seed"}
_BOOL_KEYS = {"se_enabled", "init_kick"}
_WALK_KEYS = set(WALK_DEFAULTS) | {"coin", "gamma", "alpha", "chi", "T", "J"}
_ENSEMBLE_KEYS = set(ENSEMBLE_DEFAULTS)

_ALLOWED = {
    "walk": _WALK_KEYS | _ENSEMBLE_KEYS,
    "scan": (_WALK_KEYS - {"coin", "gamma", "alpha", "chi"}) | _ENSEMBLE_KEYS | {"gamma_range", "alpha_range"},
    "sweep": (_WALK_KEYS - {"J"}) | _ENSEMBLE_KEYS | {"p_list", "J_list"},
    "timeseries": _WALK_KEYS | _ENSEMBLE_KEYS | {"p_list"},
}
_REQUIRED = {
    "walk": ("T", "J"),
    "scan": ("T", "J", "gamma_range", "alpha_range"),
    "sweep": ("T", "p_list", "J_list"),
    "timeseries": ("T", "J", "p_list"),
}
_NEEDS_COIN = {"walk", "sweep", "timeseries"}


@dataclass
class RunConfig:
    """Validated configuration of one command."""

    command: str
    ensemble: EnsembleConfig
    values: dict  # resolved key-value view, as it would appear in a file
    defaults: dict  # keys that were filled from defaults
    overrides: dict
    scan: BlochScanSpec | None = None
    p_list: list = field(default_factory=list)
    J_list: list = field(default_factory=list)


def _load_yaml(path) -> tuple[dict, dict]:
    """Mapping plus the 1-based line of each top-level key."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", line=None if mark is None else mark.line + 1) from None
    if data is None:
        return {}, {}
    if not isinstance(data, dict) or not isinstance(node, yaml.MappingNode):
        raise ConfigError("config file must hold a key-value mapping")
    lines = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    return data, lines


def _check_type(key, value, line):
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key=key, line=line)
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=key, line=line)
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", key=key, line=line)
        return float(value)
    return value


def _coin(values: dict, lines: dict):
    """Walk coin from a name or from balanced Bloch angles."""
    has_angles = "gamma" in values or "alpha" in values
    if "coin" in values and has_angles:
        raise ConfigError("give either a coin name or gamma/alpha, not both", key="coin", line=lines.get("coin"))
    if has_angles:
        for key in ("gamma", "alpha"):
            if key not in values:
                raise ConfigError("missing mandatory field", key=key)
        chi = values.get("chi", math.pi / 4)
        angles = BlochAngles(chi, values["gamma"], values["alpha"])
        label = f"M({chi!r},{values['gamma']!r},{values['alpha']!r})"
        return coin_from_bloch(angles), label
    name = values["coin"]
    if not isinstance(name, str):
        raise ConfigError(f"expected a coin name, got {name!r}", key="coin", line=lines.get("coin"))
    try:
        return named_coin(name), name.upper()
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], key="coin", line=lines.get("coin")) from None


def _init_coin(value, line):
    """A coin name, or a mapping of Bloch angles ``{gamma, alpha[, chi]}``."""
    if isinstance(value, str) and value.upper() in ("Y", "W", "GH"):
        return named_coin(value)
    if isinstance(value, dict) and {"gamma", "alpha"} <= set(value) <= {"gamma", "alpha", "chi"}:
        ang = {k: _check_type(k, v, line) for k, v in value.items()}
        return coin_from_bloch(BlochAngles(ang.get("chi", math.pi / 4), ang["gamma"], ang["alpha"]))
    raise ConfigError(f"expected Y, W, GH or {{gamma, alpha}}, got {value!r}", key="init_coin", line=line)


def _range3(key, value, line):
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 3
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
    ):
        raise ConfigError(f"expected [lo, hi, count], got {value!r}", key=key, line=line)
    return float(value[0]), float(value[1]), value[2]


def _number_list(key, value, line, kind):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"expected a non-empty list, got {value!r}", key=key, line=line)
    for v in value:
        bad = isinstance(v, bool) or not isinstance(v, (int, float) if kind is float else int)
        if bad:
            raise ConfigError(f"entry {v!r} is not a valid {kind.__name__}", key=key, line=line)
    return [kind(v) for v in value]


def build_config(command: str, raw: dict, lines: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Validate a raw mapping for ``command``; ``overrides`` win over ``raw``."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    lines = lines or {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    allowed = _ALLOWED[command]
    for key in list(raw) + list(overrides):
        if key not in allowed:
            raise ConfigError(f"unknown key for '{command}'", key=str(key), line=lines.get(key))
    merged = {**raw, **overrides}
    # an override of one coin form replaces the other form given in the file
    if "coin" in overrides:
        for key in ("gamma", "alpha", "chi"):
            merged.pop(key, None)
    elif {"gamma", "alpha"} & set(overrides):
        merged.pop("coin", None)
    for key in _REQUIRED[command]:
        if key not in merged:
            raise ConfigError("missing mandatory field", key=key)
    if command in _NEEDS_COIN and not ({"coin", "gamma", "alpha"} & set(merged)):
        raise ConfigError("missing mandatory field (a coin name or gamma/alpha)", key="coin")

    def line(key):
        return None if key in overrides else lines.get(key)

    values = {key: _check_type(key, val, line(key)) for key, val in merged.items()}
    defaults = {}
    for table in (WALK_DEFAULTS, ENSEMBLE_DEFAULTS):
        for key, val in table.items():
            if key in allowed and key not in values:
                defaults[key] = val
                values[key] = val

    walk_kw = {key: values[key] for key in _WALK_KEYS & set(values) - {"coin", "gamma", "alpha", "chi"}}
    if command == "sweep":
        walk_kw["J"] = 1  # replaced per sweep entry
    walk_kw["init_coin"] = _init_coin(values["init_coin"], line("init_coin"))
    if command in _NEEDS_COIN:
        walk_kw["coin"], walk_kw["coin_label"] = _coin(values, {k: line(k) for k in values})

    try:
        ens = EnsembleConfig(
            walk=WalkConfig(**walk_kw),
            n_trajectories=values["n_trajectories"],
            n_beta_samples=values["n_beta_samples"],
            beta_fwhm=values["beta_fwhm"],
            master_seed=values["seed"],
        )
        cfg = RunConfig(command, ens, values, defaults, overrides)
        if command == "scan":
            cfg.scan = BlochScanSpec(
                _range3("gamma_range", values["gamma_range"], line("gamma_range")),
                _range3("alpha_range", values["alpha_range"], line("alpha_range")),
                ens,
            )
        if command in ("sweep", "timeseries"):
            cfg.p_list = _number_list("p_list", values["p_list"], line("p_list"), float)
            if any(not 0 <= p <= 1 for p in cfg.p_list):
                raise ConfigError("SE probabilities must lie in [0, 1]", key="p_list")
        if command == "sweep":
            cfg.J_list = _number_list("J_list", values["J_list"], line("J_list"), int)
            if any(J < 1 for J in cfg.J_list):
                raise ConfigError("widths must be positive", key="J_list")
        if command == "timeseries" and values["T"] < 8:
            raise ConfigError("time series need T >= 8", key="T")
    except ConfigError as exc:
        if exc.line is None and exc.key is not None:
            key = "seed" if exc.key == "master_seed" else exc.key
            if line(key) is not None:
                raise ConfigError(str(exc).split(": ", 1)[-1], key=key, line=line(key)) from None
        raise
    return cfg


def parse_config(path, command: str = "walk", overrides: dict | None = None) -> RunConfig:
    """Read and validate a YAML config file for ``command``."""
    raw, lines = _load_yaml(path)
    return build_config(command, raw, lines, overrides)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    defaults: dict
    overrides: dict
    master_seed: int
    started: str
    finished: str = ""
    version: str = __version__
    exit_code: int = 0
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "master_seed": self.master_seed,
            "started": self.started,
            "finished": self.finished,
            "exit_code": self.exit_code,
            "config": self.config,
            "defaults": self.defaults,
            "overrides": self.overrides,
            "outputs": self.outputs,
        }


def verify_manifest(out_dir) -> list[str]:
    """Names of listed files whose digest no longer matches (empty when intact)."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    bad = []
    for entry in manifest["outputs"]:
        path = out_dir / entry["path"]
        if not path.exists() or sha256_file(path) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


class OutputDir:
    """Writes files via temporary names and removes everything on failure."""

    def __init__(self, path):
        self.path = Path(path)
        self.written: list[Path] = []
        self._created = False

    def open(self) -> None:
        if not self.path.exists():
            self.path.mkdir(parents=True)
            self._created = True
        if not self.path.is_dir():
            raise NotADirectoryError(f"{self.path} is not a directory")
        probe = self.path / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()

    def write(self, name: str, writer) -> Path:
        """``writer(tmp_path)`` produces the file; it is renamed into place."""
        final = self.path / name
        tmp = self.path / f".{name}.tmp"
        try:
            writer(tmp)
            os.replace(tmp, final)
        finally:
            if tmp.exists():
                tmp.unlink()
        self.written.append(final)
        return final

    def rollback(self) -> None:
        for p in self.written:
            try:
                p.unlink()
            except OSError:
                pass
        self.written.clear()
        if self._created:
            try:
                self.path.rmdir()
            except OSError:
                pass


def _write_text(text: str):
    def writer(path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    return writer


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _dist_csv(probs: np.ndarray, n: np.ndarray) -> str:
    out = ["t,n,prob"]
    for t, row in enumerate(probs):
        out.extend(f"{t},{int(m)},{float(p)!r}" for m, p in zip(n, row))
    return "\n".join(out) + "\n"


def _asym_csv(s: np.ndarray, err: np.ndarray) -> str:
    out = ["t,S,stderr"]
    out.extend(f"{t},{float(a)!r},{float(b)!r}" for t, (a, b) in enumerate(zip(s, err)))
    return "\n".join(out) + "\n"


def _csv_writer(obj):
    return lambda path: obj.to_csv(path)


def _progress(quiet: bool):
    if quiet:
        return None

    def sink(done, total):
        print(f"\r{done}/{total}", end="\n" if done == total else "", file=sys.stderr, flush=True)

    return sink


def _run(cfg: RunConfig, out: OutputDir, threads: int, log_events: bool, quiet: bool) -> int:
    """Write the command's data files; returns the exit code to report."""
    ens = cfg.ensemble
    if cfg.command == "walk":
        log = EventLog() if log_events else None
        res = run_ensemble(ens, progress=_progress(quiet), threads=threads, event_log=log)
        out.write("distribution.csv", _write_text(_dist_csv(res.probs, res.grid.n)))
        out.write("asymmetry.csv", _write_text(_asym_csv(res.s_mean, res.s_stderr)))
        if log is not None:
            out.write("events.jsonl", log.write_jsonl)
    elif cfg.command == "scan":
        res = scan_bloch_grid(cfg.scan, threads=threads, progress=_progress(quiet))
        out.write("s_matrix.csv", _csv_writer(res))
        out.write("scan.json", lambda p: res.to_json(p))
        if res.n_sentinel:
            print(f"warning: {res.n_sentinel} cell(s) hit the grid edge and were stored as NaN", file=sys.stderr)
    elif cfg.command == "sweep":
        table = sweep_pse(ens, cfg.p_list, cfg.J_list, threads=threads)
        out.write("sweep.csv", _csv_writer(table))
    else:
        res = time_series(ens, cfg.p_list, ens.walk.T, threads=threads)
        out.write("timeseries.csv", _csv_writer(res))
        out.write("fits.json", _write_text(_json_text(res.fits_dict())))
        failed = [float(p) for p, f in zip(res.p_list, res.fits) if f is None]
        if failed:
            print(f"fit error: no power-law fit possible for p_se in {failed}", file=sys.stderr)
            return FitError.exit_code
    return EXIT_OK


def run_command(command, config_path, out_dir, overrides=None, threads=None, log_events=False, quiet=True) -> int:
    """Run one command end to end and return its exit code."""
    started = _now()
    try:
        cfg = parse_config(config_path, command, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    out = OutputDir(out_dir)
    try:
        out.open()
    except OSError as exc:
        print(f"output error: cannot write to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    threads = threads or os.cpu_count() or 1
    try:
        code = _run(cfg, out, threads, log_events, quiet)
        manifest = RunManifest(
            command=command,
            config={
                "values": _jsonable(cfg.values),
                "ensemble": cfg.ensemble.to_dict(),
                **({"scan": cfg.scan.to_dict()} if cfg.scan else {}),
            },
            defaults=_jsonable(cfg.defaults),
            overrides=_jsonable(cfg.overrides),
            master_seed=int(cfg.ensemble.master_seed),
            started=started,
            exit_code=code,
        )
        manifest.outputs = [
            {"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size} for p in out.written
        ]
        manifest.finished = _now()
        out.write("manifest.json", _write_text(_json_text(manifest.to_dict())))
    except AokrError as exc:
        out.rollback()
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        out.rollback()
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BaseException:
        out.rollback()
        raise
    return code


def _jsonable(d: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


_OVERRIDE_FLAGS = [
    ("--coin", "coin", str),
    ("--gamma", "gamma", float),
    ("--alpha", "alpha", float),
    ("--T", "T", int),
    ("--J", "J", int),
    ("--k", "k", float),
    ("--tau-p", "tau_p", float),
    ("--h", "h", int),
    ("--p-se", "p_se", float),
    ("--beta0", "beta0", float),
    ("--beta-fwhm", "beta_fwhm", float),
    ("--n-beta-samples", "n_beta_samples", int),
    ("--n-max", "n_max", int),
]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aokr", description="Kicked-rotor quantum walk simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run a {name} study")
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", required=True, metavar="DIR")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--threads", type=int, metavar="N", help="worker threads (default: CPU count)")
        p.add_argument("--trajectories", type=int, metavar="N", dest="n_trajectories")
        p.add_argument("--log-events", action="store_true", help="write events.jsonl (walk only)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        for flag, dest, typ in _OVERRIDE_FLAGS:
            p.add_argument(flag, dest=dest, type=typ)
    r = sub.add_parser("rate", help="SE rate from kick strength and detunings")
    r.add_argument("--k", type=float, default=1.45)
    r.add_argument("--tau-p", type=float, default=0.005)
    r.add_argument("--tau-se", type=float, required=True)
    r.add_argument("--delta", type=float, required=True, help="detuning from the first excited level")
    r.add_argument("--Delta", type=float, required=True, help="detuning from the second excited level")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "rate":
        try:
            rate = se_rate_from_physical(args.k, args.tau_p, args.tau_se, args.delta, args.Delta)
        except AokrError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return exc.exit_code
        print(repr(rate))
        return EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("config error: --threads must be positive", file=sys.stderr)
        return 2
    overrides = {dest: getattr(args, dest) for _, dest, _ in _OVERRIDE_FLAGS}
    overrides["seed"] = args.seed
    overrides["n_trajectories"] = args.n_trajectories
    if args.log_events and args.command != "walk":
        print("config error: --log-events is only available for walk", file=sys.stderr)
        return 2
    return run_command(
        args.command,
        args.config,
        args.out,
        overrides=overrides,
        threads=args.threads,
        log_events=args.log_events,
        quiet=args.quiet,
    )


if __name__ == "__main__":
    sys.exit(main())
