"""Command-line entry point: ``zaremba-pl <command> CONFIG [options]``.

Exit codes: 0 ok, 2 config error, 3 stage failure, 4 I/O error.
The output root can be redirected with ``ZPL_OUTPUT_ROOT``.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .harness import COMMANDS, EXIT_CONFIG, EXIT_IO, EXIT_OK, execute, limit_threads

HELP = {
    "run": "full pipeline: admissibility, capacity, solve, growth, dichotomy",
    "admissibility": "sampled checks of conditions A, B, C per layer",
    "capacity": "capacity bounds for configured sets or for the layers in the window",
    "solve": "mixed boundary value problem on the truncated domain",
    "constants": "growth-lemma constants table",
    "dichotomy": "capacity + solve, then classification and envelopes",
    "asymptotics": "degenerate-ellipticity sum asymptotics (no PDE solve)",
}


def shipped_configs() -> list[str]:
    root = resources.files("zaremba_pl") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config(name: str) -> Path:
    """A path, or the name of a shipped config (with or without .yaml)."""
    p = Path(name)
    if p.exists():
        return p
    stem = name[:-5] if name.endswith(".yaml") else name
    shipped = resources.files("zaremba_pl") / "configs" / f"{stem}.yaml"
    if shipped.is_file():
        return Path(str(shipped))
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zaremba-pl", description="Phragmen-Lindelof experiments for the mixed Zaremba problem.")
    ap.add_argument("--list-configs", action="store_true", help="print the shipped config names and exit")
    sub = ap.add_subparsers(dest="command")
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=HELP[cmd])
        p.add_argument("config", help="config path or shipped config name")
        p.add_argument("--out", help="output directory (default: output.dir or runs/<name>)")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for parallel stages and BLAS threads")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--print-effective-config", action="store_true", help="print the expanded config and exit")
        if cmd == "constants":
            p.add_argument("--a", type=float)
            p.add_argument("--q", type=float)
            p.add_argument("--N0", type=int)
            p.add_argument("--s", type=float, nargs="+")
    return ap


def _table(rows: list[dict]) -> str:
    cols = ["a", "q", "N0", "s", "eta1", "eta2", "eta3", "beta0", "tau", "lam", "boundary_q"]
    lines = ["  ".join(f"{c:>12}" for c in cols)]
    for r in rows:
        lines.append("  ".join(f"{r[c]:>12.6g}" if isinstance(r[c], float) else f"{r[c]!s:>12}" for c in cols))
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.list_configs:
        print("\n".join(shipped_configs()))
        return EXIT_OK
    if not args.command:
        ap.print_help()
        return EXIT_CONFIG
    try:
        cfg = ExperimentConfig.load(resolve_config(args.config))
        if args.seed is not None:
            raw = cfg.effective()
            raw["seed"] = args.seed
            cfg = ExperimentConfig(raw, cfg.source)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_effective_config:
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    overrides = None
    if args.command == "constants":
        overrides = {"a": args.a, "q": args.q, "N0": args.N0, "s": args.s}
    out = cfg.output_dir(args.out)
    try:
        with limit_threads(max(1, args.jobs)):
            status, manifest = execute(args.command, cfg, out, args.jobs, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    if status != EXIT_OK:
        print(f"stage failure: {manifest.message}", file=sys.stderr)
        return status
    if args.command == "constants":
        rows = json.loads((out / "constants.json").read_text())["constants"]
        print(_table(rows))
    elif args.command == "asymptotics":
        print((out / "asymptotics.csv").read_text(), end="")
    print(f"wrote {len(manifest.files)} files to {out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
