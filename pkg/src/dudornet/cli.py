"""Command-line entry point: data generation, training, evaluation and plots.

Exit codes: 0 success, 2 usage or configuration error, 3 training
divergence, 4 I/O error. Every command writes ``run_manifest.txt`` next to
its outputs.
"""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .core import (ConfigurationError, FormatError, UnsupportedError, ValidationError, load_array,
                   save_array)
from .data import PhantomSpec, load_split, make_dataset
from .evaluation import (ReconReport, evaluate, image_metrics, mask_seed, reconstruct, recon_name,
                         undersample)
from .model import MANIFEST as CKPT_MANIFEST
from .model import load_checkpoint
from .sampling import make_mask
from .training import DivergenceError, TrainConfig, ablation_config, train

log = logging.getLogger("dudornet")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
RUN_MANIFEST = "run_manifest.txt"
DIFF_GAIN = 5.0


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config: str = ""
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    duration_s: float = 0.0

    def to_text(self) -> str:
        lines = [f"command={self.command}", f"argv={shlex.join(self.argv)}",
                 f"seed={self.seed}", f"duration_s={self.duration_s:.3f}"]
        lines += [f"input.{k}={v}" for k, v in self.inputs.items()]
        lines += [f"output.{k}={v}" for k, v in self.outputs.items()]
        lines += ["[config]"] + self.config.rstrip("\n").splitlines()
        return "\n".join(lines) + "\n"

    @classmethod
    def read(cls, path) -> "RunManifest":
        text = Path(path).read_text().splitlines()
        split = text.index("[config]")
        kv = dict(line.split("=", 1) for line in text[:split])
        seed = None if kv["seed"] == "None" else int(kv["seed"])
        return cls(kv["command"], shlex.split(kv["argv"]), "\n".join(text[split + 1:]) + "\n",
                   {k[6:]: v for k, v in kv.items() if k.startswith("input.")},
                   {k[7:]: v for k, v in kv.items() if k.startswith("output.")},
                   seed, float(kv["duration_s"]))

    def write(self, directory) -> Path:
        path = Path(directory) / RUN_MANIFEST
        path.write_text(self.to_text())
        return path


def _checkpoint_dir(path) -> Path:
    path = Path(path)
    if (path / "checkpoint" / CKPT_MANIFEST).is_file():
        path = path / "checkpoint"
    if not (path / CKPT_MANIFEST).is_file():
        raise UsageError(f"no checkpoint found at {path}")
    return path


def _data_dir(path) -> Path:
    path = Path(path)
    if not (path / "manifest.txt").is_file():
        raise UsageError(f"no dataset manifest in {path}")
    return path


# --- commands ------------------------------------------------------------------

def cmd_make_data(args, run: RunManifest):
    spec = PhantomSpec(H=args.size, W=args.size, seed=args.seed)
    rows = make_dataset(args.n_train, args.n_val, args.n_test, spec, args.out,
                        overwrite=args.overwrite)
    run.seed = args.seed
    run.config = f"n_train={args.n_train}\nn_val={args.n_val}\nn_test={args.n_test}\nsize={args.size}\n"
    run.outputs["dataset"] = str(args.out)
    log.info("wrote %d samples to %s", len(rows), args.out)


def train_config_from_args(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        cfg = TrainConfig.from_text(Path(args.config).read_text(), cfg)
    if args.ablation:
        cfg = ablation_config(cfg, args.ablation)
    model = cfg.model
    if args.n_rec is not None:
        model = replace(model, n_rec=args.n_rec)
    if args.no_prior:
        model = replace(model, use_prior=False)
    if args.no_dd:
        model = replace(model, use_dual_domain=False)
    if args.no_dil:
        model = replace(model, use_dilation=False)
    if args.lambda_dc is not None:
        model = replace(model, lambda_dc=args.lambda_dc)
    top = {k: v for k, v in (("pattern", args.pattern), ("target_R", args.R),
                             ("steps", args.steps), ("seed", args.seed),
                             ("batch_size", args.batch_size), ("learning_rate", args.lr))
           if v is not None}
    return replace(cfg, model=model, **top)


def cmd_train(args, run: RunManifest):
    cfg = train_config_from_args(args)
    data = _data_dir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.config, run.seed = cfg.to_text(), cfg.seed
    run.inputs["data"] = str(data)
    train_set = load_split(data, "train")
    val_set = load_split(data, "val") if cfg.val_every else ()
    progress = lambda row: log.info("step %d loss %.4e", row["step"], row["train_loss"])
    try:
        result = train(cfg, train_set, val_set, out_dir=out, callback=progress)
    except DivergenceError as err:
        run.outputs["diverged"] = str(err.dump_path)
        raise
    run.outputs["checkpoint"] = str(result.checkpoint_dir)
    run.outputs["loss_curve"] = str(out / "loss_curve.tsv")


def _find_sample(data, sample_id):
    for s in load_split(data):
        if s.sample_id == sample_id:
            return s
    raise UsageError(f"sample {sample_id!r} not found in {data}")


def cmd_reconstruct(args, run: RunManifest):
    ckpt = _checkpoint_dir(args.checkpoint)
    data = _data_dir(args.data)
    model = load_checkpoint(ckpt)
    s = _find_sample(data, args.sample)
    mask = make_mask(args.pattern, *s.shape, args.R,
                     mask_seed(0, args.pattern, args.R) if args.seed is None else args.seed)
    k_u = undersample(s.x_full.data, mask.mask)
    recon = reconstruct(model, k_u, mask.mask, s.x_prior.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{s.sample_id}_{mask.pattern.value}_R{float(args.R):g}"
    save_array(out / f"{stem}.dar", recon)
    png = out / f"{stem}_magnitude.png"
    _save_gray(png, np.abs(recon) / max(np.abs(s.x_full.data).max(), 1e-12))
    metrics = image_metrics(recon, s.x_full.data)
    run.config = model.cfg.to_text() + "".join(f"{k}={v}\n" for k, v in mask.metadata().items())
    run.seed = mask.seed
    run.inputs.update(checkpoint=str(ckpt), data=str(data), sample=s.sample_id)
    run.outputs.update(recon=str(out / f"{stem}.dar"), png=str(png))
    log.info("%s: psnr %.2f dB ssim %.4f", stem, metrics["psnr_db"], metrics["ssim"])


def cmd_evaluate(args, run: RunManifest):
    ckpt = _checkpoint_dir(args.checkpoint)
    data = _data_dir(args.data)
    model = load_checkpoint(ckpt)
    if args.lambda_dc is not None:
        model.cfg = replace(model.cfg, lambda_dc=args.lambda_dc)
    samples = load_split(data, args.split)
    if not samples:
        raise UsageError(f"split {args.split!r} of {data} is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, samples, args.patterns, args.R, checkpoint_dir=ckpt,
                      config_text=model.cfg.to_text(), recon_dir=out / "recon")
    report.write(out)
    run.config = model.cfg.to_text()
    run.inputs.update(checkpoint=str(ckpt), data=str(data), split=args.split)
    run.outputs.update(report=str(out / "report.tsv"), summary=str(out / "summary.txt"),
                       recon=str(out / "recon"))
    sys.stdout.write(report.summary())


def cmd_plot(args, run: RunManifest):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report_dir = Path(args.report)
    if report_dir.is_file():
        report_dir = report_dir.parent
    report = ReconReport.read(report_dir)
    data = _data_dir(args.data)
    truth = {s.sample_id: s for s in load_split(data)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for row in (r for r in report.rows if r["method"] == "model"):
        recon = load_array(report_dir / "recon" / recon_name(row["sample_id"], row["pattern"],
                                                            row["target_R"]))
        ref = np.abs(truth[row["sample_id"]].x_full.data).astype(np.float64)
        peak = ref.max()
        gt, rc = ref / peak, np.abs(recon) / peak
        diff = np.clip(DIFF_GAIN * np.abs(rc - gt), 0.0, 1.0)
        fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
        for ax, img, title in zip(axes, (gt, rc, diff),
                                  ("ground truth", f"reconstruction\nSSIM {row['ssim']:.4f}",
                                   f"|difference| x{DIFF_GAIN:g}")):
            ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(title, fontsize=9)
            ax.axis("off")
        name = (f"{row['sample_id']}_{row['pattern']}_R{row['target_R']:g}"
                f"_triptych_diffx{DIFF_GAIN:g}.png")
        fig.savefig(out / name, dpi=100, bbox_inches="tight")
        plt.close(fig)
        written.append(name)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for pattern in sorted({r["pattern"] for r in report.rows}):
        Rs = sorted({r["target_R"] for r in report.rows if r["pattern"] == pattern})
        for method, style in (("model", "-o"), ("zp", "--s")):
            for ax, metric in zip(axes, ("ssim", "psnr_db")):
                vals = [report.aggregates(method, pattern, R)[metric][0] for R in Rs]
                ax.plot(Rs, vals, style, label=f"{pattern} {method}")
    for ax, metric in zip(axes, ("SSIM", "PSNR (dB)")):
        ax.set_xlabel("acceleration R")
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.savefig(out / "curves_ssim_psnr_vs_R.png", dpi=100, bbox_inches="tight")
    plt.close(fig)
    run.inputs.update(report=str(report_dir), data=str(data))
    run.outputs.update(triptychs=str(len(written)), curves=str(out / "curves_ssim_psnr_vs_R.png"))


def _save_gray(path, img):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.imsave(path, np.clip(img, 0, 1), cmap="gray", vmin=0.0, vmax=1.0)


def cmd_rerun(args, run: RunManifest):
    previous = RunManifest.read(args.manifest)
    run.inputs["manifest"] = str(args.manifest)
    code = main(previous.argv)
    if code:
        raise SystemExit(code)


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dudornet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("make-data", help="write a synthetic paired-contrast dataset")
    m.add_argument("--n-train", type=int, default=70)
    m.add_argument("--n-val", type=int, default=10)
    m.add_argument("--n-test", type=int, default=20)
    m.add_argument("--size", type=int, default=128)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--overwrite", action="store_true")
    m.set_defaults(func=cmd_make_data, out_key="out")

    t = sub.add_parser("train", help="train a model on a dataset's train split")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="key=value TrainConfig file")
    t.add_argument("--ablation", choices=list("ABCDEFGHabcdefgh"))
    t.add_argument("--pattern", choices=["cartesian", "radial", "spiral"])
    t.add_argument("--R", type=float)
    t.add_argument("--n-rec", type=int)
    t.add_argument("--no-prior", action="store_true")
    t.add_argument("--no-dd", action="store_true")
    t.add_argument("--no-dil", action="store_true")
    t.add_argument("--lambda-dc", type=float)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train, out_key="out")

    r = sub.add_parser("reconstruct", help="reconstruct one sample")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--sample", required=True, help="sample id from the dataset manifest")
    r.add_argument("--pattern", default="radial", choices=["cartesian", "radial", "spiral"])
    r.add_argument("--R", type=float, default=5.0)
    r.add_argument("--seed", type=int, help="mask seed")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct, out_key="out")

    e = sub.add_parser("evaluate", help="metrics over patterns and accelerations")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--patterns", nargs="+", default=["cartesian", "radial", "spiral"])
    e.add_argument("--R", type=float, nargs="+", default=[2, 3, 4, 5, 6])
    e.add_argument("--lambda-dc", type=float, help="override the checkpoint's DC weight")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate, out_key="out")

    pl = sub.add_parser("plot", help="triptychs and metric-vs-R curves from a report")
    pl.add_argument("--report", required=True, help="directory written by evaluate, or its report.tsv")
    pl.add_argument("--data", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot, out_key="out")

    rr = sub.add_parser("rerun", help="repeat the invocation recorded in a run manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", default=None, help=argparse.SUPPRESS)
    rr.set_defaults(func=cmd_rerun, out_key=None)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    run = RunManifest(args.command, argv)
    start = time.time()
    try:
        args.func(args, run)
    except (UsageError, ConfigurationError, ValidationError, UnsupportedError) as err:
        log.error("%s", err)
        return EXIT_USAGE
    except DivergenceError as err:
        log.error("%s; diagnostics in %s", err, err.dump_path)
        code = EXIT_DIVERGED
    except (OSError, FormatError) as err:
        log.error("%s", err)
        return EXIT_IO
    else:
        code = EXIT_OK
    run.duration_s = time.time() - start
    if args.out_key:
        out = Path(getattr(args, args.out_key))
        out.mkdir(parents=True, exist_ok=True)
        run.write(out)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
