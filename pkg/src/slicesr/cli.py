"""Command-line interface: ``slicesr run|simulate|make-profile|evaluate|phantom``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import re
import resource
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .acquisition import (
    AcquisitionSpec,
    ProfileFormatError,
    default_tap_count,
    load_profile,
    make_profile,
    save_profile,
    simulate_acquisition,
)
from .inference import super_resolve
from .io import VolumeFormatError, load_volume, save_volume
from .metrics import cdsc, format_report, psnr, ssim
from .network import SRNetworkConfig
from .trainer import TrainConfig, TrainingDivergedError, train

log = logging.getLogger("slicesr")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
TG_PRESETS = ("3x0", "3x1", "4x0", "4x1", "4x1.2", "5x0", "5x1", "5x1.5")
_TG = re.compile(r"^\s*(\d+(?:\.\d*)?|\.\d+)\s*[xX|‖]\s*(\d+(?:\.\d*)?|\.\d+)\s*$")


class CLIError(Exception):
    def __init__(self, message, code=EXIT_ERROR):
        super().__init__(message)
        self.code = code


@dataclasses.dataclass
class RunManifest:
    input: str
    output: str
    thickness: float
    gap: float
    hr_spacing: float
    axis: int
    profile: dict
    train: dict
    network: dict
    seed: int
    timing_s: dict = dataclasses.field(default_factory=dict)
    peak_memory_mb: float = 0.0
    kernel_backend: str = kernels.BACKEND
    version: str = __version__

    @property
    def spec(self) -> AcquisitionSpec:
        return AcquisitionSpec(self.thickness, self.gap, self.hr_spacing)

    def write(self, path):
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        blob = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in blob.items() if k in names})


def parse_tg(text: str) -> tuple[float, float]:
    """Parse ``"5x1.5"`` (or ``5|1.5``) into thickness and gap in mm."""
    match = _TG.match(text)
    if not match:
        raise argparse.ArgumentTypeError(f"expected THICKNESSxGAP such as 5x1.5, got {text!r}")
    return float(match.group(1)), float(match.group(2))


def sidecar(output, suffix: str) -> Path:
    return Path(str(output) + suffix)


# run -------------------------------------------------------------------------

def _resolve_run(args) -> RunManifest:
    """Turn ``run`` flags into a manifest, reading only volume metadata."""
    volume = load_volume(args.input, normalize=False)
    axis = args.axis if args.axis is not None else volume.through_axis
    if axis is None:
        raise CLIError(
            f"cannot infer the through-plane axis from isotropic spacing {volume.spacing}; "
            "pass --axis",
            EXIT_USAGE,
        )
    in_plane = [volume.spacing[a] for a in range(3) if a != axis]
    hr_spacing = min(in_plane)
    if not math.isclose(in_plane[0], in_plane[1], rel_tol=1e-2):
        log.warning("in-plane spacings differ (%s); using %g mm", in_plane, hr_spacing)
    separation = volume.spacing[axis]
    if args.thickness is not None:
        thickness, gap = args.thickness, args.gap or 0.0
    elif args.gap is not None:
        thickness, gap = separation - args.gap, args.gap
    else:
        thickness, gap = separation, 0.0
        log.warning(
            "no --thickness/--gap given: assuming %g mm slices without gap", separation
        )
    if args.profile:
        profile = {"source": "file", "path": str(args.profile)}
    else:
        profile = {
            "source": "parametric",
            "shape": "gaussian",
            "fwhm": thickness,
            "taps": default_tap_count(thickness, hr_spacing),
            "spacing": hr_spacing,
        }
    train_cfg = TrainConfig(total_patches=args.patches, batch_size=args.batch, seed=args.seed)
    return RunManifest(
        input=str(args.input),
        output=str(args.output),
        thickness=thickness,
        gap=gap,
        hr_spacing=hr_spacing,
        axis=axis,
        profile=profile,
        train=dataclasses.asdict(train_cfg),
        network={"channels": args.channels, "blocks": args.blocks, "expansion": 2.0},
        seed=args.seed,
    )


def execute_run(manifest: RunManifest) -> int:
    """Train on the input volume and write the super-resolved output, manifest and log."""
    t0 = time.perf_counter()
    volume = load_volume(manifest.input, through_axis=manifest.axis)
    spec = manifest.spec
    axis = manifest.axis
    if not math.isclose(spec.lr_separation, volume.spacing[axis], rel_tol=1e-3):
        log.warning(
            "thickness + gap = %g mm disagrees with header spacing %g mm; using %g mm",
            spec.lr_separation, volume.spacing[axis], spec.lr_separation,
        )
        volume = volume.regridded(axis, volume.data, spec.lr_separation)
    if spec.ratio < 1 - 1e-12:
        raise CLIError(f"slice separation is finer than the in-plane spacing (r={spec.ratio:.4g})")

    if manifest.profile["source"] == "file":
        profile = load_profile(manifest.profile["path"])
        if not math.isclose(profile.tap_spacing, spec.hr_spacing, rel_tol=1e-6):
            raise CLIError(
                f"profile tap spacing {profile.tap_spacing} mm does not match "
                f"the in-plane spacing {spec.hr_spacing} mm",
                EXIT_USAGE,
            )
    else:
        p = manifest.profile
        profile = make_profile(p["shape"], p["fwhm"], p["taps"], p["spacing"])

    log_path = sidecar(manifest.output, ".train.log")
    log_path.write_text("")
    t1 = time.perf_counter()
    if math.isclose(spec.ratio, 1.0, rel_tol=1e-12):
        log.warning("ratio is 1: nothing to super-resolve, copying input")
        out = volume
    else:
        net_cfg = SRNetworkConfig(ratio=spec.ratio, seed=manifest.seed, **manifest.network)
        net = train(volume, spec, profile, TrainConfig(**manifest.train), net_cfg, log_path)
        t2 = time.perf_counter()
        out = super_resolve(volume, net, spec).volume
        manifest.timing_s["train"] = round(t2 - t1, 3)
    t3 = time.perf_counter()
    save_volume(out, manifest.output)
    manifest.timing_s["total"] = round(time.perf_counter() - t0, 3)
    manifest.timing_s["inference"] = round(t3 - t1 - manifest.timing_s.get("train", 0), 3)
    manifest.peak_memory_mb = round(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024, 1)
    manifest.write(sidecar(manifest.output, ".manifest.json"))
    log.info("wrote %s (%s)", manifest.output, "x".join(map(str, out.shape)))
    return EXIT_OK


def cmd_run(args) -> int:
    if args.manifest:
        manifest = RunManifest.read(args.manifest)
        if args.output:
            manifest.output = str(args.output)
        manifest.timing_s, manifest.peak_memory_mb = {}, 0.0
    else:
        if not args.input or not args.output:
            raise CLIError("run needs --input and --output (or --manifest)", EXIT_USAGE)
        manifest = _resolve_run(args)
    try:
        return execute_run(manifest)
    except TrainingDivergedError as exc:
        raise CLIError(f"training diverged: {exc}", EXIT_DIVERGED) from None


# simulate / make-profile / evaluate / phantom ---------------------------------

def cmd_simulate(args) -> int:
    thickness, gap = args.tg
    volume = load_volume(args.input)
    try:
        out = simulate_acquisition(volume, thickness, gap, axis=args.axis, shape=args.shape)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from None
    save_volume(out, args.output)
    log.info("simulated %gx%g: %s -> %s", thickness, gap, volume.shape, out.shape)
    return EXIT_OK


def cmd_make_profile(args) -> int:
    try:
        profile = make_profile(args.shape, args.fwhm, args.taps, args.spacing)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from None
    save_profile(profile, args.out)
    log.info("profile FWHM %.4g mm written to %s", profile.fwhm, args.out)
    return EXIT_OK


def _load_labels(path) -> np.ndarray:
    import nibabel as nib

    return np.rint(np.asarray(nib.load(str(path)).dataobj)).astype(np.int64)


def _shape_diagnostic(a, b) -> str:
    if len(a) != len(b):
        return f"dimensionality differs: {a} vs {b}"
    rows = [
        f"  axis {i}: {x} vs {y}" + ("" if x == y else "  <-- mismatch")
        for i, (x, y) in enumerate(zip(a, b))
    ]
    return "shape mismatch between ground truth and prediction:\n" + "\n".join(rows)


def cmd_evaluate(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"psnr", "ssim", "cdsc"}
    if unknown:
        raise CLIError(f"unknown metrics: {sorted(unknown)}", EXIT_USAGE)
    has_labels = args.labels_gt is not None or args.labels_pred is not None
    if "cdsc" in metrics and not has_labels:
        raise CLIError("cdsc needs --labels-gt and --labels-pred", EXIT_USAGE)
    gt = load_volume(args.gt, normalize=False)
    pred = load_volume(args.pred, normalize=False)
    if gt.shape != pred.shape:
        raise CLIError(_shape_diagnostic(gt.shape, pred.shape))
    report = {}
    if "psnr" in metrics:
        report["psnr_db"] = psnr(gt, pred)
    if "ssim" in metrics:
        report["ssim"] = ssim(gt, pred)
    if has_labels:
        lab_gt, lab_pred = _load_labels(args.labels_gt), _load_labels(args.labels_pred)
        if lab_gt.shape != lab_pred.shape:
            raise CLIError(_shape_diagnostic(lab_gt.shape, lab_pred.shape))
        result = cdsc(lab_gt, lab_pred)
        report["cdsc_mean"] = result.mean
        for label, value in result.per_label.items():
            report[f"cdsc_{label}"] = value
    text = format_report(report)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_phantom(args) -> int:
    from .grid import GridSpec1D
    from .phantom import make_phantom

    volume, phantom = make_phantom((args.size,) * 3, args.spacing, seed=args.seed)
    if args.like:
        # ground truth on another volume's grid, e.g. a super-resolved output
        ref = load_volume(args.like, normalize=False)
        linear = ref.affine[:3, :3]
        if not np.allclose(linear, np.diag(np.diag(linear))):
            raise CLIError(f"{args.like}: only axis-aligned affines are supported")
        grids = [
            GridSpec1D.from_first(n, ref.spacing[i], ref.affine[i, 3])
            for i, n in enumerate(ref.shape)
        ]
        volume = ref.replace(data=phantom.render(grids), intensity_scale=1.0)
    save_volume(volume, args.out)
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicesr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="self-train and super-resolve an anisotropic volume")
    p.add_argument("--input", type=Path)
    p.add_argument("--output", type=Path)
    p.add_argument("--thickness", type=float, help="slice thickness (profile FWHM) in mm")
    p.add_argument("--gap", type=float, help="slice gap in mm")
    p.add_argument("--axis", type=int, choices=(0, 1, 2), help="through-plane axis")
    p.add_argument("--profile", type=Path, help="slice profile text file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patches", type=int, default=1_000_000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--channels", type=int, default=256)
    p.add_argument("--blocks", type=int, default=16)
    p.add_argument("--manifest", type=Path, help="replay a previous run's manifest")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="simulate a multi-slice acquisition")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--tg", type=parse_tg, required=True,
                   help=f"THICKNESSxGAP in mm, e.g. one of {', '.join(TG_PRESETS)}")
    p.add_argument("--axis", type=int, choices=(0, 1, 2), default=2)
    p.add_argument("--shape", choices=("gaussian", "rect"), default="gaussian")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-profile", help="write a parametric slice profile")
    p.add_argument("--shape", choices=("gaussian", "rect"), default="gaussian")
    p.add_argument("--fwhm", type=float, required=True)
    p.add_argument("--taps", type=int, default=21)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_make_profile)

    p = sub.add_parser("evaluate", help="compare a prediction with ground truth")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--labels-gt", type=Path)
    p.add_argument("--labels-pred", type=Path)
    p.add_argument("--metrics", default="psnr,ssim")
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("phantom", help="render a synthetic test volume")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--like", type=Path, help="render on the grid of this volume instead")
    p.set_defaults(func=cmd_phantom)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and (args.labels_gt is None) != (args.labels_pred is None):
        parser.error("--labels-gt and --labels-pred must be given together")
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"slicesr {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, VolumeFormatError, ProfileFormatError) as exc:
        print(f"slicesr {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
