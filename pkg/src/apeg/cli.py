"""``apeg`` command-line entry point.

Commands share one output directory::

    train.bin / test.bin (+ .meta.json)   gen-data
    <variant>.ckpt, <variant>_loss.csv    train
    generated_<variant>.npz,
    quality_<variant>.csv, cdf_<variant>.csv   generate
    decisions_<variant>.csv, report_<variant>.csv   auth
    report.csv, cdf.csv                   eval
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import auth
from .channel_sim import (DatasetError, generate_dataset, load_external_dataset, save_dataset, sidecar_path,
                          split_samples)
from .config import ConfigError, RunConfig, preset_config
from .denoiser.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimators import GENERATORS, substream
from .fingerprint import NormStats, fit_norm, from_image, to_image

log = logging.getLogger("apeg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4
VARIANTS = ("ccmdm", "cadm", "ca", "oracle")
QUALITY_COLUMNS = ("ssim", "psnr", "cosine", "nmse_db")
MA_WINDOW = 20


class DataError(RuntimeError):
    pass


# --- helpers ------------------------------------------------------------------

def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def moving_average(values, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean over up to ``window`` previous entries (shorter at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def cdf_table(values) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return [(float(x), (i + 1) / v.size) for i, x in enumerate(v)]


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(cfg: RunConfig, name: str):
    path = Path(cfg.out_dir) / f"{name}.bin"
    if not path.exists():
        raise DataError(f"{path} not found; run gen-data first")
    samples = load_external_dataset(path, expect_shape=(cfg.tx_antennas, cfg.subcarriers))
    meta = json.loads(sidecar_path(path).read_text()) if sidecar_path(path).exists() else {}
    return samples, meta


def _norm(cfg: RunConfig) -> NormStats:
    side = sidecar_path(Path(cfg.out_dir) / "train.bin")
    if not side.exists():
        raise DataError(f"{side} not found; run gen-data first")
    meta = json.loads(side.read_text())
    if not meta.get("norm"):
        raise DataError("training sidecar carries no normalisation statistics")
    return NormStats.from_dict(meta["norm"])


def _stack(samples, attr):
    return np.stack([getattr(s, attr) for s in samples])


def _received(samples):
    return np.stack([s.received for s in samples])


def _test_stream(cfg: RunConfig, snr_db: float):
    window = cfg.auth_window or cfg.num_test
    return generate_dataset(cfg.scenario(), cfg.array(), cfg.num_test, snr_db, window=window,
                            start_slot=cfg.num_train)


# --- gen-data -----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> int:
    out = _out(cfg)
    scenario, array = cfg.scenario(), cfg.array()
    window = cfg.auth_window or cfg.num_test
    if cfg.shuffle_split:
        full = generate_dataset(scenario, array, cfg.num_samples, cfg.snr_db, window=window)
        train, test = split_samples(full, cfg.train_fraction, shuffle=True, rng=substream(cfg.seed, "split"))
    else:
        # time-ordered split; slots are generated independently so each segment
        # is identical to the corresponding slice of one long run
        train = generate_dataset(scenario, array, cfg.num_train, cfg.snr_db, window=window)
        test = _test_stream(cfg, cfg.snr_db)
    norm = fit_norm(np.concatenate([_stack(train, "alice_est"), _stack(train, "jack_est")]), joint=cfg.norm_joint)
    extra = {"norm": norm.to_dict(), "snr_db": cfg.snr_db}
    save_dataset(out / "train.bin", train, scenario, array, extra)
    save_dataset(out / "test.bin", test, scenario, array, extra)
    n_alice = sum(s.label == "alice" for s in test)
    print(f"samples={len(train) + len(test)} train={len(train)} test={len(test)} "
          f"test_alice={n_alice} test_eve={len(test) - n_alice}")
    return EXIT_OK


# --- train --------------------------------------------------------------------

def _make_generator(cfg: RunConfig, variant: str):
    return GENERATORS[variant](preset=cfg.preset, net_config=cfg.net_config(), T=cfg.T,
                               beta_start=cfg.beta_start, beta_end=cfg.beta_end, epochs=cfg.epochs,
                               batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed,
                               strict_paper=cfg.strict_paper, sample_batch=cfg.sample_batch)


def cmd_train(cfg: RunConfig, variant: str) -> int:
    if variant not in GENERATORS:
        raise ConfigError(f"train needs --variant ccmdm or cadm, got {variant!r}")
    out = _out(cfg)
    train, _ = _load_split(cfg, "train")
    if cfg.train_limit:
        train = train[:cfg.train_limit]
    norm = _norm(cfg)
    X = to_image(_stack(train, "jack_est"), norm, clip=cfg.norm_clip)
    y = to_image(_stack(train, "alice_est"), norm, clip=cfg.norm_clip)
    est = _make_generator(cfg, variant)
    est.fit(X, y, callback=lambda ep, loss: log.info("epoch %d loss %.6f", ep, loss))
    hist = est.loss_history_
    _write_csv(out / f"{variant}_loss.csv", ("epoch", "loss", f"loss_ma{MA_WINDOW}"),
               zip(range(len(hist)), hist, moving_average(hist)))
    save_checkpoint(out / f"{variant}.ckpt", variant, est.net_, est.config_, est.net_.image_shape,
                    est.schedule_, norm)
    print(f"variant={variant} epochs={len(hist)} final_loss={hist[-1] if hist else float('nan'):.6f}")
    return EXIT_OK


# --- generate -----------------------------------------------------------------

def _generator_from_checkpoint(cfg: RunConfig, variant: str):
    path = Path(cfg.out_dir) / f"{variant}.ckpt"
    if not path.exists():
        raise CheckpointError(f"{path} not found; run train --variant {variant} first")
    ck = load_checkpoint(path)
    if ck.variant != variant:
        raise CheckpointError(f"{path} holds a {ck.variant} model, {variant} requested")
    m, k = cfg.tx_antennas, cfg.subcarriers
    expected = (2 * m, k) if variant == "ccmdm" else (m, k)
    if tuple(ck.image_shape) != expected:
        raise CheckpointError(f"checkpoint image shape {ck.image_shape} does not match data {expected}")
    est = GENERATORS[variant].from_net(ck.net, ck.schedule, (m, k), ck.cfg, seed=cfg.seed,
                                       strict_paper=cfg.strict_paper, sample_batch=cfg.sample_batch)
    return est, ck.norm


def generate_fingerprints(cfg: RunConfig, variant: str, stream, norm: NormStats, est=None):
    """Return ``(images, complex)`` of the generated Alice fingerprints for ``stream``."""
    jack = _stack(stream, "jack_est")
    if variant == "ca":
        return to_image(jack, norm, clip=cfg.norm_clip), jack.astype(np.complex128)
    if variant == "oracle":
        true = _stack(stream, "true_alice")
        return to_image(true, norm, clip=cfg.norm_clip), true.astype(np.complex128)
    imgs = est.predict(to_image(jack, norm, clip=cfg.norm_clip))
    return imgs, from_image(imgs, norm)


def quality(gen_img, gen_c, stream, norm: NormStats, clip: bool = True) -> np.ndarray:
    """Per-sample (ssim, psnr, cosine, nmse_db) against the noiseless Alice channel."""
    true_c = _stack(stream, "true_alice")
    true_img = to_image(true_c, norm, clip=clip)
    return np.array([(auth.ssim(g, t), auth.psnr(g, t), auth.cosine_sim(g, t), auth.nmse_db(gc, tc))
                     for g, t, gc, tc in zip(gen_img, true_img, gen_c, true_c)])


def _cdf_rows(q: np.ndarray, prefix=()):
    for j, name in enumerate(QUALITY_COLUMNS):
        for value, p in cdf_table(q[:, j]):
            yield (*prefix, name, value, p)


def cmd_generate(cfg: RunConfig, variant: str) -> int:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    out = _out(cfg)
    test, _ = _load_split(cfg, "test")
    if variant in GENERATORS:
        est, norm = _generator_from_checkpoint(cfg, variant)
        norm = norm or _norm(cfg)
    else:
        est, norm = None, _norm(cfg)
    if variant == "oracle" and any(s.true_alice is None for s in test):
        raise DataError("oracle mode needs the noiseless Alice channel in the test set")
    imgs, comp = generate_fingerprints(cfg, variant, test, norm, est)
    np.savez(out / f"generated_{variant}.npz", images=imgs, complex=comp,
             time_slot=np.array([s.time_slot for s in test]))
    q = quality(imgs, comp, test, norm, cfg.norm_clip)
    _write_csv(out / f"quality_{variant}.csv", ("sample_index",) + QUALITY_COLUMNS,
               ([i, *row] for i, row in enumerate(q)))
    _write_csv(out / f"cdf_{variant}.csv", ("metric", "value", "cumulative_probability"), _cdf_rows(q))
    med = np.median(q, axis=0)
    print(f"variant={variant} n={len(test)} " + " ".join(f"median_{c}={v:.4f}" for c, v in zip(QUALITY_COLUMNS, med)))
    return EXIT_OK


# --- auth ---------------------------------------------------------------------

def authenticate(gen_img, received_img, labels, kind, k: float, window: int = 0):
    """Rank decisions per window of ``window`` samples (0 = one window)."""
    s = len(labels)
    if s < 1:
        raise DataError("empty authentication stream")
    window = window or s
    decisions = []
    for lo in range(0, s, window):
        hi = min(lo + window, s)
        a = auth.RankAuthenticator(kind, k).fit()
        for d in a.decide((gen_img[lo:hi], received_img[lo:hi]), labels[lo:hi]):
            decisions.append(auth.Decision(d.sample_index + lo, d.value, d.dissimilarity, d.rank, d.accepted,
                                           d.true_label))
    return decisions


REPORT_COLUMNS = ("snr_db", "metric_kind", "model", "f1", "r_e",
                  "mean_ssim", "mean_psnr", "mean_cosine", "mean_nmse_db")


def report_rows(cfg, snr_db, variant, gen_img, stream, norm, q):
    received = to_image(_received(stream), norm, clip=cfg.norm_clip)
    labels = [s.label for s in stream]
    rows, dec_rows = [], []
    means = q.mean(axis=0)
    for kind in cfg.metrics:
        kind = auth.MetricKind.parse(kind)
        decisions = authenticate(gen_img, received, labels, kind, cfg.attack_ratio, cfg.auth_window)
        _, f1, r_e = auth.score(decisions)
        rows.append((float(snr_db), kind.value, variant, f1, r_e, *means))
        dec_rows.extend((kind, d) for d in decisions)
    return rows, dec_rows


def cmd_auth(cfg: RunConfig, variant: str) -> int:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    out = Path(cfg.out_dir)
    test, meta = _load_split(cfg, "test")
    gen_path = out / f"generated_{variant}.npz"
    if not gen_path.exists():
        raise DataError(f"{gen_path} not found; run generate --variant {variant} first")
    with np.load(gen_path) as z:
        imgs, comp = z["images"], z["complex"]
    if len(imgs) != len(test):
        raise DataError(f"{gen_path} holds {len(imgs)} fingerprints, stream has {len(test)}")
    norm = _norm(cfg)
    q = quality(imgs, comp, test, norm, cfg.norm_clip)
    rows, dec_rows = report_rows(cfg, meta.get("snr_db", cfg.snr_db), variant, imgs, test, norm, q)
    auth.write_decisions_csv(out / f"decisions_{variant}.csv", dec_rows)
    _write_csv(out / f"report_{variant}.csv", REPORT_COLUMNS, rows)
    for r in rows:
        print(f"variant={variant} metric={r[1]} f1={r[3]:.4f} r_e={r[4]:.4f}")
    return EXIT_OK


# --- eval ---------------------------------------------------------------------

def cmd_eval(cfg: RunConfig) -> int:
    out = _out(cfg)
    norm = _norm(cfg)
    gens = {}
    for v in cfg.eval_variants:
        if v in GENERATORS:
            gens[v], _ = _generator_from_checkpoint(cfg, v)
    rows, cdf = [], []
    for snr in cfg.snr_list:
        stream = _test_stream(cfg, snr)
        for v in cfg.eval_variants:
            imgs, comp = generate_fingerprints(cfg, v, stream, norm, gens.get(v))
            q = quality(imgs, comp, stream, norm, cfg.norm_clip)
            r, _ = report_rows(cfg, snr, v, imgs, stream, norm, q)
            rows.extend(r)
            cdf.extend(_cdf_rows(q, (float(snr), v)))
            log.info("snr %.1f %s median nmse %.2f dB", snr, v, np.median(q[:, 3]))
    _write_csv(out / "report.csv", REPORT_COLUMNS, rows)
    _write_csv(out / "cdf.csv", ("snr_db", "model", "metric", "value", "cumulative_probability"), cdf)
    print(f"report rows={len(rows)} cdf rows={len(cdf)}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apeg", description="Collaborator-assisted CSI fingerprint generation "
                                "and physical-layer authentication.")
    p.add_argument("command", choices=("gen-data", "train", "generate", "auth", "eval"))
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=("desk", "paper", "tiny"))
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    base = preset_config(args.preset or "desk")
    cfg = RunConfig.load(args.config, base) if args.config else base
    if args.preset and cfg.preset != args.preset:
        cfg = RunConfig.from_pairs({"preset": args.preset}, cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out:
        overrides["out_dir"] = args.out
    return RunConfig.from_pairs(overrides, cfg) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.variant or "cadm")
        if args.command == "generate":
            return cmd_generate(cfg, args.variant or "cadm")
        if args.command == "auth":
            return cmd_auth(cfg, args.variant or "cadm")
        return cmd_eval(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DatasetError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
