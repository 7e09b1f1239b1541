"""Command line front end.

    e3dtv <command> [--config PATH] [--set key=value ...] [--seed N] [--threads N]

Commands: ``denoise``, ``cs-sample``, ``cs-reconstruct``, ``simulate-noise``,
``evaluate``, ``benchmark``.  Settings come from a flat ``key = value`` file
(``#`` starts a comment) and ``--set`` overrides; command-line values win
over the file, the file over built-in defaults.

Exit codes: 0 success, 1 configuration/validation error, 2 I/O or format
error, 3 numerical failure or no convergence within the iteration cap.
"""

import argparse
import csv
import io
import logging
import os
import sys
import typing
from dataclasses import dataclass, field, fields, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import cs, harness
from .denoise import NumericalError, SolverConfig, denoise
from .fileio import (FormatError, measurement_bytes, read_measurements,
                     read_tensor, tensor_bytes)

log = logging.getLogger("e3dtv")

COMMANDS = ("denoise", "cs-sample", "cs-reconstruct", "simulate-noise", "evaluate", "benchmark")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
# sweeps include the mixed-noise cases, which need more iterations than the default cap
BENCHMARK_ITERS = 400


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = ""
    seed: int = 0
    threads: int = 1
    # files
    input: str = ""
    output: str = ""
    noise_output: str = ""
    clean_output: str = ""
    reference: str = ""
    measurements: str = ""
    report: str = ""
    output_dir: str = ""
    export_dir: str = ""
    export_bands: list = field(default_factory=list)
    clip: bool = False
    # solver
    tau: float | None = None
    lam: float | None = None
    c: float = 0.0004
    rank: int | None = None
    mu0: float = 1e-2
    mu_growth: float = 1.05
    mu_max: float = 1e6
    eps1: float = 1e-6
    eps2: float = 1e-6
    max_iters: int | None = None
    baseline_3dtv: bool = False
    mu4_factor: float = 10.0
    tau_scale: float = cs.DESK_TAU_SCALE
    # noise simulation
    noise_case: str = "a"
    sigma: float | None = None
    impulse: float | None = None
    sigma_is_variance: bool = False
    # phantom (simulate-noise without input, benchmark)
    phantom_h: int = 32
    phantom_w: int = 32
    phantom_s: int = 16
    phantom_rank: int = 3
    phantom_smoothness: float = 2.0
    # compressed sensing
    ratio: float = 0.2
    dims: str = ""
    # benchmark
    benchmark: str = "denoise"
    cases: list = field(default_factory=lambda: list("abcdef"))
    ratios: list = field(default_factory=lambda: [0.003, 0.01, 0.05, 0.1, 0.2])

    def validate(self):
        if self.task not in COMMANDS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.benchmark not in ("denoise", "cs"):
            raise ConfigError("benchmark must be 'denoise' or 'cs'")
        if self.dims and len(_parse_dims(self.dims)) != 3:
            raise ConfigError(f"dims must look like HxWxS, got {self.dims!r}")

    def solver(self, default_rank=3, default_iters=200):
        return SolverConfig(
            tau=self.tau, lam=self.lam, c=self.c,
            rank=self.rank if self.rank is not None else default_rank,
            mu0=self.mu0, mu_growth=self.mu_growth, mu_max=self.mu_max,
            eps1=self.eps1, eps2=self.eps2,
            max_iters=self.max_iters if self.max_iters is not None else default_iters,
            baseline_3dtv=self.baseline_3dtv, mu4_factor=self.mu4_factor,
        )

    def cs_solver(self, ratio):
        over = dict(mu0=self.mu0, mu_growth=self.mu_growth, mu_max=self.mu_max,
                    eps1=self.eps1, eps2=self.eps2, baseline_3dtv=self.baseline_3dtv,
                    mu4_factor=self.mu4_factor)
        for key in ("tau", "rank", "max_iters"):
            if getattr(self, key) is not None:
                over[key] = getattr(self, key)
        return cs.default_cs_config(ratio, tau_scale=self.tau_scale, **over)

    def noise_spec(self, s, seed):
        over = {}
        if self.sigma is not None:
            over["gaussian_sigma"] = self.sigma
        if self.impulse is not None:
            over["impulse_ratio"] = self.impulse
        return harness.NoiseSpec.for_case(self.noise_case, s, seed=seed,
                                          sigma_is_variance=self.sigma_is_variance, **over)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_HINTS = typing.get_type_hints(RunConfig)
_LIST_ITEM = {"export_bands": int, "cases": str, "ratios": float}


def _parse_dims(text):
    return tuple(int(p) for p in text.lower().split("x"))


def _coerce(key, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    hint = _HINTS[key]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    optional = bool(args)
    base = args[0] if optional else hint
    raw = raw.strip()
    try:
        if key in _LIST_ITEM:
            return [_LIST_ITEM[key](p.strip()) for p in raw.split(",") if p.strip()]
        if optional and raw.lower() in ("", "none"):
            return None
        if base is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return base(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text):
    """Parse flat ``key = value`` lines into a dict of typed values."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        out[key.strip()] = _coerce(key.strip(), raw)
    return out


def load_config(task, path=None, overrides=(), seed=None, threads=None):
    values = {}
    if path:
        try:
            with open(path) as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    if seed is not None:
        values["seed"] = seed
    if threads is not None:
        values["threads"] = threads
    values["task"] = task
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def subseed(seed, k):
    """Independent integer seed number ``k`` derived from the run seed."""
    return int(np.random.SeedSequence(seed).spawn(k + 1)[k].generate_state(1)[0])


class Outputs:
    """Stage output files in memory and write them all once compute succeeded."""

    def __init__(self):
        self.files = {}

    def add(self, path, data):
        if path:
            self.files[path] = data

    def commit(self):
        written = []
        try:
            for path, data in self.files.items():
                d = os.path.dirname(os.path.abspath(path))
                os.makedirs(d, exist_ok=True)
                tmp = path + ".part"
                with open(tmp, "wb") as fh:
                    fh.write(data)
                written.append(tmp)
            for path in self.files:
                os.replace(path + ".part", path)
        except OSError:
            for tmp in written:
                if os.path.exists(tmp):
                    os.unlink(tmp)
            raise


def _require(cfg, *keys):
    missing = [k for k in keys if not getattr(cfg, k)]
    if missing:
        raise ConfigError(f"{cfg.task}: missing required setting(s) {', '.join(missing)}")


def report_csv(report):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["iteration", "mu", "res_data", "res_grad", "objective"])
    for it, mu, rd, rg, obj in report.rows():
        wr.writerow([it, f"{mu:.17g}", f"{rd:.17g}", f"{rg:.17g}", f"{obj:.17g}"])
    wr.writerow(["converged", int(report.converged), "", "", ""])
    return buf.getvalue().encode()


def band_png(band):
    from PIL import Image

    img = np.round(np.clip(band, 0.0, 1.0) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _export_bands(cfg, x, out):
    if not cfg.export_bands:
        return
    _require(cfg, "export_dir")
    s = x.shape[2]
    for k in cfg.export_bands:
        if not 1 <= k <= s:
            raise ConfigError(f"export band {k} outside [1, {s}]")
        out.add(os.path.join(cfg.export_dir, f"band_{k:03d}.png"), band_png(x[:, :, k - 1]))


def _maybe_clip(cfg, x):
    return np.clip(x, 0.0, 1.0) if cfg.clip else x


def _quality_csv(q):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["band", "psnr_db", "ssim", "ergas"])
    for k, (p, s) in enumerate(zip(q.band_psnr, q.band_ssim), start=1):
        wr.writerow([k, f"{p:.6f}", f"{s:.6f}", ""])
    wr.writerow(["mean", f"{q.psnr_db:.6f}", f"{q.ssim:.6f}", f"{q.ergas:.6f}"])
    return buf.getvalue().encode()


def cmd_denoise(cfg):
    _require(cfg, "input", "output")
    y = read_tensor(cfg.input)
    scfg = cfg.solver()
    scfg.resolved(y.shape)  # validate before any compute
    x, e, report = denoise(y, scfg)
    out = Outputs()
    out.add(cfg.output, tensor_bytes(_maybe_clip(cfg, x)))
    out.add(cfg.noise_output, tensor_bytes(e))
    out.add(cfg.report, report_csv(report))
    _export_bands(cfg, x, out)
    out.commit()
    log.info("denoise finished in %.2fs (%d iterations)", report.wall_time, report.iterations)
    return _convergence_code(report)


def cmd_cs_sample(cfg):
    _require(cfg, "input", "measurements")
    x = read_tensor(cfg.input)
    op = cs.build_operator(*x.shape, cfg.ratio, seed=subseed(cfg.seed, 2))
    out = Outputs()
    out.add(cfg.measurements, measurement_bytes(op.apply(x), op))
    out.commit()
    return EXIT_OK


def cmd_cs_reconstruct(cfg):
    _require(cfg, "measurements", "output")
    y, op = read_measurements(cfg.measurements)
    if cfg.dims and _parse_dims(cfg.dims) != op.dims:
        raise ConfigError(f"measurement file dims {op.dims} do not match configured {cfg.dims}")
    scfg = cfg.cs_solver(op.ratio)
    scfg.resolved(op.dims)
    z, x, report = cs.reconstruct(y, op, scfg)
    out = Outputs()
    out.add(cfg.output, tensor_bytes(_maybe_clip(cfg, z)))
    out.add(cfg.clean_output, tensor_bytes(_maybe_clip(cfg, x)))
    out.add(cfg.report, report_csv(report))
    _export_bands(cfg, z, out)
    out.commit()
    return _convergence_code(report)


def _phantom(cfg):
    return harness.gen_phantom(cfg.phantom_h, cfg.phantom_w, cfg.phantom_s,
                               rank=cfg.phantom_rank, smoothness=cfg.phantom_smoothness,
                               seed=subseed(cfg.seed, 0))


def cmd_simulate_noise(cfg):
    _require(cfg, "output")
    x = read_tensor(cfg.input) if cfg.input else _phantom(cfg)
    y = harness.apply_noise(x, cfg.noise_spec(x.shape[2], subseed(cfg.seed, 1)))
    out = Outputs()
    out.add(cfg.output, tensor_bytes(_maybe_clip(cfg, y)))
    if not cfg.input:
        out.add(cfg.clean_output, tensor_bytes(x))
    _export_bands(cfg, y, out)
    out.commit()
    return EXIT_OK


def cmd_evaluate(cfg):
    _require(cfg, "reference", "input", "report")
    ref = read_tensor(cfg.reference)
    est = read_tensor(cfg.input)
    q = harness.quality_report(ref, est)
    out = Outputs()
    out.add(cfg.report, _quality_csv(q))
    out.commit()
    print(f"PSNR {q.psnr_db:.3f} dB  SSIM {q.ssim:.4f}  ERGAS {q.ergas:.3f}")
    return EXIT_OK


def _metric_rows(label, qualities):
    rows = []
    for name in ("PSNR", "SSIM", "ERGAS"):
        attr = {"PSNR": "psnr_db", "SSIM": "ssim", "ERGAS": "ergas"}[name]
        rows.append([label, name] + [f"{getattr(q, attr):.4f}" for q in qualities])
    return rows


def _band_plot(title, curves):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for name, q in curves:
        bands = np.arange(1, len(q.band_psnr) + 1)
        axes[0].plot(bands, q.band_psnr, label=name)
        axes[1].plot(bands, q.band_ssim, label=name)
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].set_ylabel("SSIM")
    for ax in axes:
        ax.set_xlabel("band")
    axes[1].legend(fontsize="small")
    fig.suptitle(title)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=80, metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def cmd_benchmark(cfg):
    _require(cfg, "output_dir")
    x = read_tensor(cfg.input) if cfg.input else _phantom(cfg)
    out = Outputs()
    table = []
    all_ok = True
    if cfg.benchmark == "denoise":
        header = ["case", "index", "noisy", "3dtv", "e3dtv"]
        for case in cfg.cases:
            spec = harness.NoiseSpec.for_case(case, x.shape[2], seed=subseed(cfg.seed, 1),
                                              sigma_is_variance=cfg.sigma_is_variance)
            y = harness.apply_noise(x, spec)
            scfg = cfg.solver(default_iters=BENCHMARK_ITERS)
            xe, _, rep = denoise(y, scfg)
            xb, _, rep_b = denoise(y, replace(scfg, baseline_3dtv=True))
            if not (rep.converged and rep_b.converged):
                log.warning("case %s: hit the iteration cap", case)
                all_ok = False
            qs = [harness.quality_report(x, y), harness.quality_report(x, xb),
                  harness.quality_report(x, xe)]
            table += _metric_rows(case, qs)
            out.add(os.path.join(cfg.output_dir, f"bands_case_{case}.png"),
                    _band_plot(f"Case {case}", zip(("noisy", "3DTV", "E-3DTV"), qs)))
            log.info("case %s: PSNR %.2f -> 3DTV %.2f / E-3DTV %.2f", case,
                     qs[0].psnr_db, qs[1].psnr_db, qs[2].psnr_db)
    else:
        header = ["ratio", "index", "3dtv", "e3dtv"]
        for ratio in cfg.ratios:
            op = cs.build_operator(*x.shape, ratio, seed=subseed(cfg.seed, 2))
            y = op.apply(x)
            scfg = cfg.cs_solver(ratio)
            qs = []
            for baseline in (True, False):
                z, _, rep = cs.reconstruct(y, op, replace(scfg, baseline_3dtv=baseline))
                all_ok &= rep.converged
                qs.append(harness.quality_report(x, z))
            table += _metric_rows(f"{ratio:g}", qs)
            out.add(os.path.join(cfg.output_dir, f"bands_ratio_{ratio:g}.png"),
                    _band_plot(f"ratio {ratio:g}", zip(("3DTV", "E-3DTV"), qs)))
            log.info("ratio %g: PSNR 3DTV %.2f / E-3DTV %.2f", ratio, qs[0].psnr_db, qs[1].psnr_db)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(table)
    out.add(os.path.join(cfg.output_dir, "table.csv"), buf.getvalue().encode())
    out.commit()
    sys.stdout.write(buf.getvalue())
    return EXIT_OK if all_ok else EXIT_NUMERIC


def _convergence_code(report):
    if report.converged:
        return EXIT_OK
    log.warning("no convergence within %d iterations", report.iterations)
    return EXIT_NUMERIC


HANDLERS = {
    "denoise": cmd_denoise,
    "cs-sample": cmd_cs_sample,
    "cs-reconstruct": cmd_cs_reconstruct,
    "simulate-noise": cmd_simulate_noise,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def build_parser():
    p = argparse.ArgumentParser(prog="e3dtv", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one setting (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.command, args.config, args.overrides, args.seed, args.threads)
        with threadpool_limits(limits=cfg.threads):
            return HANDLERS[args.command](cfg)
    except FormatError as exc:
        print(f"e3dtv: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"e3dtv: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"e3dtv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"e3dtv: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(run())
