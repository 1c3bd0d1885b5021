"""``sparse-persistent``: generate, prune, lay out, run, simulate, check feasibility.

Every command that writes a file also writes ``<file>.manifest.json`` with the
command, parameters, seed, tool version and SHA-256 of its inputs and outputs.
Exit codes: 0 ok, 1 usage/parameter error, 2 unreadable file format,
3 verification failure.
"""

import argparse
import hashlib
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .banks import estimate_timestep_cost, simulate_layer
from .config import RunConfig, SyncMode
from .dense import ActivationFn, max_relative_error, run_sequence_dense
from .errors import FormatError
from .executor import PersistentEngine, interleave_gate_rows
from .layout import build_schedule, optimize_layer
from .resources import Algorithm, check_feasibility, load_arch_profile
from .sparse import (
    effective_layer_size,
    load_dense,
    load_layer,
    pad_rows,
    reconstruct_dense,
    save_dense,
    save_layer,
)
from .workloads import PRUNERS, random_dense, random_inputs

EXIT_USAGE, EXIT_FORMAT, EXIT_VERIFY = 1, 2, 3
MANIFEST_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
VERIFY_TOLERANCE = 1e-5
GENERATOR = "numpy.random.default_rng (PCG64)"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command: str, inputs, params: dict, seed=None) -> Path:
    """Write ``<out>.manifest.json`` next to ``out`` and return its path."""
    out = Path(out)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "command": command,
        "tool_version": tool_version(),
        "seed": seed,
        "generator": GENERATOR if seed is not None else None,
        "parameters": params,
        "inputs": [{"path": str(p), "sha256": sha256_file(p)} for p in inputs],
        "outputs": [{"path": str(out), "sha256": sha256_file(out)}],
    }
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _emit(args, report: dict, lines) -> None:
    if args.json:
        print(json.dumps({"schema_version": REPORT_SCHEMA_VERSION, **report}, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


# ---------------------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    m = random_dense(args.rows, args.cols, args.seed, args.dist, args.scale)
    save_dense(m, args.out)
    params = {"rows": args.rows, "cols": args.cols, "dist": args.dist, "scale": args.scale}
    manifest = write_manifest(args.out, "gen", [], params, seed=args.seed)
    report = {"output": args.out, "manifest": str(manifest), "sha256": sha256_file(args.out), **params}
    _emit(args, report, [f"wrote {args.rows}x{args.cols} matrix to {args.out}",
                         f"sha256 {report['sha256']}"])
    return 0


def cmd_prune(args) -> int:
    m = load_dense(args.input)
    pruned = PRUNERS[args.mode](m, args.density)
    padded = pad_rows(pruned)
    save_layer(padded, args.out)
    size = m.shape[0] * m.shape[1]
    pre = pruned.stored_pairs / size
    post = padded.density
    params = {"density": args.density, "mode": args.mode}
    manifest = write_manifest(args.out, "prune", [args.input], params)
    report = {
        "output": args.out,
        "manifest": str(manifest),
        "rows": padded.rows,
        "cols": padded.cols,
        "requested_density": args.density,
        "density_before_padding": pre,
        "density_after_padding": post,
        "padding_overhead": post / pre - 1.0,
        "pairs_per_row": padded.pairs_per_row,
        "nonzeros": pruned.nnz,
        "effective_layer_size": effective_layer_size(m.shape[1], args.density)
        if m.shape[0] == m.shape[1] else None,
        **params,
    }
    _emit(args, report, [
        f"wrote {padded.rows}x{padded.cols} layer ({args.mode}) to {args.out}",
        f"density requested {args.density:.4f}  before padding {pre:.4f}  after padding {post:.4f}",
        f"pairs per row {padded.pairs_per_row}  padding overhead {report['padding_overhead']:.1%}",
    ])
    return 0


def cmd_layout(args) -> int:
    layer = optimize_layer(load_layer(args.input), args.width)
    save_layer(layer, args.out)
    manifest = write_manifest(args.out, "layout", [args.input], {"w": args.width})
    report = {"output": args.out, "manifest": str(manifest), "layout_tag": layer.layout_tag,
              "w": args.width}
    _emit(args, report, [f"wrote {layer.layout_tag} layer to {args.out}"])
    return 0


def cmd_simulate(args) -> int:
    layer = load_layer(args.input)
    schedule = build_schedule(layer, args.lanes_per_row)
    report = simulate_layer(schedule, layer, args.width, args.batch)
    cost = estimate_timestep_cost(report, load_arch_profile(args.arch), args.sync)
    out = report.to_dict()
    out["stage_costs"] = {**vars(cost), "total": cost.total}
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
        write_manifest(args.out, "simulate", [args.input],
                       {"w": args.width, "batch": report.batch, "sync": args.sync,
                        "lanes_per_row": schedule.lanes_per_row, "arch": args.arch})
    hist = "  ".join(f"{k}:{v}" for k, v in sorted(report.histogram.items()))
    _emit(args, out, [
        f"{'layer':<22}{report.rows}x{report.cols}, {report.pairs_per_row} pairs/row",
        f"{'layout':<22}{report.layout_tag}",
        f"{'vector width / batch':<22}{report.vector_width} / {report.batch}",
        f"{'load instructions':<22}{report.load_instructions}",
        f"{'ideal cycles':<22}{report.ideal_cycles}",
        f"{'actual cycles':<22}{report.actual_cycles}",
        f"{'penalty':<22}{report.penalty:.4f}",
        f"{'cycles per load':<22}{hist}",
        f"{'model timestep cost':<22}{cost.total:.1f}",
    ])
    return 0


def _run_config(args) -> RunConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {"sync_mode": args.sync, "workers": args.workers, "vector_width": args.width,
                 "timesteps": args.timesteps, "batch": args.batch, "activation": args.activation}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.trace:
        data["trace"] = True
    return RunConfig.from_dict(data)


def cmd_run(args) -> int:
    cfg = _run_config(args)
    layer = load_layer(args.input)
    cell = args.cell
    wl = random_inputs(layer, cfg.batch, cfg.timesteps, args.seed, cell)
    engine = PersistentEngine(layer, build_schedule(layer), workers=cfg.resolved_workers,
                              sync_mode=cfg.sync_mode, vector_width=cfg.vector_width,
                              activation=cfg.activation, cell=cell)
    result = engine.run(wl.h0, wl.b_prime, c0=wl.c0, trace=cfg.trace)
    report = {"config": cfg.to_dict(), "seed": args.seed, "cell": cell,
              "workers_used": engine.workers,
              "staging_bytes_per_worker": result.staging_bytes_per_worker,
              "output_sha256": hashlib.sha256(result.h.tobytes()).hexdigest()}
    lines = [f"ran {cfg.timesteps} steps, batch {cfg.batch}, {cfg.sync_mode} sync, "
             f"{engine.workers} workers",
             f"output sha256 {report['output_sha256']}"]
    if args.out:
        save_dense(result.h, args.out)
        params = {**cfg.to_dict(), "cell": cell}
        report["manifest"] = str(write_manifest(args.out, "run", [args.input], params, args.seed))
    if cfg.trace and args.trace:
        with open(args.trace, "w") as f:
            for t, h in enumerate(result.trace, start=1):
                f.write(json.dumps({"step": t, "sha256": hashlib.sha256(h.tobytes()).hexdigest(),
                                    "max_abs": float(np.abs(h).max(initial=0.0))}) + "\n")
    failed = False
    if args.verify:
        dense = reconstruct_dense(layer)
        if cell == "lstm":
            inverse = np.argsort(interleave_gate_rows(layer.cols))
            ref = run_sequence_dense(dense[inverse], wl.h0, wl.b_prime[:, inverse], c0=wl.c0).h
        else:
            ref = run_sequence_dense(dense, wl.h0, wl.b_prime, cfg.activation).h
        err = max_relative_error(result.h, ref)
        failed = err > VERIFY_TOLERANCE
        report["max_relative_error"] = err
        report["verified"] = not failed
        lines.append(f"max relative error {err:.3e} ({'ok' if not failed else 'FAILED'}, "
                     f"tolerance {VERIFY_TOLERANCE:g})")
    _emit(args, report, lines)
    return EXIT_VERIFY if failed else 0


def cmd_feasibility(args) -> int:
    arch = load_arch_profile(args.arch)
    algos = [Algorithm.parse(args.algo)] if args.algo else list(Algorithm)
    verdicts = [check_feasibility(arch, a, args.hidden, args.density, args.width, args.sync,
                                  args.compress_indices) for a in algos]
    report = {"arch": arch.name, "hidden": args.hidden, "density": args.density, "w": args.width,
              "sync": SyncMode.parse(args.sync).value,
              "verdicts": [v.to_dict() for v in verdicts]}
    if len(verdicts) == 1:
        v = verdicts[0]
        lines = [str(v),
                 f"registers {v.registers_required} / {v.registers_available}, "
                 f"shared memory {v.shared_mem_required} / {v.shared_mem_available} bytes"]
    else:
        lines = [f"{'algorithm':<20}{'verdict':<26}{'registers':>22}{'shared bytes':>20}"]
        for v in verdicts:
            lines.append(f"{v.algorithm:<20}{str(v):<26}"
                         f"{v.registers_required:>11}/{v.registers_available:<10}"
                         f"{v.shared_mem_required:>9}/{v.shared_mem_available:<10}")
    _emit(args, report, lines)
    return 0


# ------------------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sparse-persistent", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--json", action="store_true", help="print a JSON report")
        sp.set_defaults(func=func)
        return sp

    sp = command("gen", cmd_gen, "generate a random dense matrix (DNSM file)")
    sp.add_argument("--rows", type=_positive, required=True)
    sp.add_argument("--cols", type=_positive, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--dist", choices=["normal", "uniform"], default="normal")
    sp.add_argument("--scale", type=float, default=None,
                    help="std (normal) or half-width (uniform); default 1/sqrt(cols)")
    sp.add_argument("-o", "--out", required=True)

    sp = command("prune", cmd_prune, "magnitude-prune a dense matrix and pad it (SPRN file)")
    sp.add_argument("input")
    sp.add_argument("-d", "--density", type=float, required=True)
    sp.add_argument("--mode", choices=sorted(PRUNERS), default="naive")
    sp.add_argument("-o", "--out", required=True)

    sp = command("layout", cmd_layout, "apply the bank-aware layout to a padded layer")
    sp.add_argument("input")
    sp.add_argument("-w", "--width", type=int, choices=[1, 2, 4], default=1)
    sp.add_argument("-o", "--out", required=True)

    sp = command("simulate", cmd_simulate, "report operate-stage bank conflicts of a layer")
    sp.add_argument("input")
    sp.add_argument("-w", "--width", type=int, choices=[1, 2, 4], default=1)
    sp.add_argument("-B", "--batch", type=_positive, default=None)
    sp.add_argument("--lanes-per-row", type=int, default=None)
    sp.add_argument("--arch", default="v100")
    sp.add_argument("--sync", choices=["barrier", "lamport"], default="lamport")
    sp.add_argument("-o", "--out", default=None, help="also write the JSON report here")

    sp = command("run", cmd_run, "run a sparse persistent RNN/LSTM on seeded inputs")
    sp.add_argument("input")
    sp.add_argument("--config", default=None, help="JSON run config; flags override it")
    sp.add_argument("--seed", type=int, default=0, help="seed for h0 and the inputs")
    sp.add_argument("--cell", choices=["rnn", "lstm"], default="rnn",
                    help="lstm expects a 4H x H layer with unit-interleaved gate rows")
    sp.add_argument("--sync", choices=["barrier", "lamport"], default=None)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("-w", "--width", type=int, choices=[1, 2, 4], default=None)
    sp.add_argument("-T", "--timesteps", type=int, default=None)
    sp.add_argument("-B", "--batch", type=int, default=None)
    sp.add_argument("--activation", choices=[a.value for a in ActivationFn], default=None)
    sp.add_argument("--verify", action="store_true", help="compare against the dense reference")
    sp.add_argument("--trace", default=None, help="write per-step checksums (JSON lines)")
    sp.add_argument("-o", "--out", default=None, help="write h_T as a DNSM file")

    sp = command("feasibility", cmd_feasibility, "check register/shared-memory feasibility")
    sp.add_argument("--arch", default="v100", help="profile name or JSON path")
    sp.add_argument("-H", "--hidden", type=_positive, required=True)
    sp.add_argument("-d", "--density", type=float, default=1.0)
    sp.add_argument("--algo", choices=[a.value for a in Algorithm], default=None)
    sp.add_argument("-w", "--width", type=int, choices=[1, 2, 4], default=1)
    sp.add_argument("--sync", choices=["barrier", "lamport"], default="lamport")
    sp.add_argument("--compress-indices", action="store_true",
                    help="what-if: pack two 16-bit indices per register")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
