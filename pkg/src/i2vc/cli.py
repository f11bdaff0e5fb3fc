"""Command-line surface: encode, decode, eval, schedule.

Container layout (all multi-byte fields little-endian):

    magic    4s   "I2VC"
    version  u8   (currently 1)
    mode     u8   0=AI 1=LDP 2=LDB 3=RA
    gop_size u16
    lambda   u16  fixed-point x16
    width    u16  frame width  (pixels)
    height   u16  frame height (pixels)
    channels u8   latent channels
    seed     u64  weight seed (drives codec, predictor and intra noise)
    p_count  u8
    i_count  u8
    t_steps  u8   denoising steps T
    t_inv    u8   inversion steps T'
    start    u8   denoise start index for inter frames
    then per frame, in coding order:
    type     u8   0=I 1=P 2=B
    length   u32  payload byte count
    payload  bytes

Frames on disk are raw planar 8-bit RGB (see latent module); encode reads
*.rgb files from a directory in sorted order, decode writes frame_%04d.rgb.
Exit codes: 0 ok, 2 config/validation, 3 I/O, 4 container format,
5 truncated payload, 6 missing reference / wrong coding order.
"""

from __future__ import annotations

import argparse
import os
import struct
import sys
import tempfile

import numpy as np

from . import diffusion, entropy, gop, harness, latent, stvc

MAGIC = b"I2VC"
VERSION = 1
_HEADER_FMT = "<4sBBHHHHBQBBBBB"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)
_MODES = ("AI", "LDP", "LDB", "RA")
_FRAME_TYPES = (gop.FrameType.I, gop.FrameType.P, gop.FrameType.B)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_TRUNCATED = 5
EXIT_ORDER = 6


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class ConfigError(CliError):
    def __init__(self, message):
        super().__init__(message, EXIT_CONFIG)


class ContainerFormatError(CliError):
    def __init__(self, message):
        super().__init__(message, EXIT_FORMAT)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "mode": str, "gop_size": int, "lambda": float, "width": int, "height": int,
    "t_steps": int, "t_inv": int, "p_count": int, "i_count": int, "seed": int,
    "start_step": str, "channels": int, "beta": float,
}


class RunConfig:
    def __init__(self, mode="LDP", gop_size=32, lam=128.0, width=64, height=64,
                 t_steps=30, t_inv=None, p_count=6, i_count=2, seed=None,
                 start_step="consistent", channels=48, beta=0.05):
        self.mode = mode
        self.gop_size = int(gop_size)
        self.lam = snap_lambda(lam)
        self.width = int(width)
        self.height = int(height)
        self.t_steps = int(t_steps)
        self.t_inv = self.t_steps // 2 if t_inv is None else int(t_inv)
        self.p_count = int(p_count)
        self.i_count = int(i_count)
        if seed is None:
            seed = int(os.environ.get("I2VC_SEED", "0"))
        self.seed = int(seed)
        self.start_step = start_step
        self.channels = int(channels)
        self.beta = float(beta)
        self.validate()

    def validate(self):
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.gop_size < 1:
            raise ConfigError("gop_size must be >= 1")
        if not (stvc.LAMBDA_MIN <= self.lam <= stvc.LAMBDA_MAX):
            raise ConfigError(f"lambda must be in [{stvc.LAMBDA_MIN:g}, {stvc.LAMBDA_MAX:g}]")
        if self.width % 4 or self.height % 4 or self.width < 4 or self.height < 4:
            raise ConfigError("frame dims must be positive multiples of 4")
        if not (1 <= self.t_steps <= 255):
            raise ConfigError("t_steps must be in [1, 255]")
        if not (0 <= self.t_inv <= self.t_steps):
            raise ConfigError("t_inv must be in [0, t_steps]")
        if self.start_step not in ("consistent", "literal"):
            raise ConfigError("start_step must be 'consistent' or 'literal'")
        if not (1 <= self.channels <= latent.PATCH_DIM):
            raise ConfigError(f"channels must be in [1, {latent.PATCH_DIM}]")

    @property
    def inter_start(self) -> int:
        return self.t_steps if self.start_step == "literal" else self.t_inv

    def gop_config(self) -> gop.GopConfig:
        return gop.GopConfig(mode=self.mode, gop_size=self.gop_size,
                             p_count=self.p_count, i_count=self.i_count)


def snap_lambda(lam: float) -> float:
    """Snap to the container's 1/16 fixed-point grid; encoder and decoder
    must agree on lambda exactly (the entropy model depends on it)."""
    return round(float(lam) * 16.0) / 16.0


def load_config(path) -> dict:
    out = {}
    try:
        with open(path) as f:
            for ln, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key=value")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in _CONFIG_KEYS:
                    raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
                try:
                    out[key] = _CONFIG_KEYS[key](val)
                except ValueError:
                    raise ConfigError(f"{path}:{ln}: bad value for {key}")
    except OSError as e:
        raise CliError(f"cannot read config: {e}", EXIT_IO)
    return out


def config_from(path, args) -> RunConfig:
    kv = load_config(path) if path else {}
    for name, key in (("mode", "mode"), ("gop", "gop_size"), ("lam", "lambda"),
                      ("seed", "seed"), ("tsteps", "t_steps"), ("invsteps", "t_inv"),
                      ("pcount", "p_count"), ("icount", "i_count"),
                      ("start_step", "start_step")):
        v = getattr(args, name, None)
        if v is not None:
            kv[key] = v
    kw = {("lam" if k == "lambda" else k): v for k, v in kv.items()}
    try:
        return RunConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e))


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

def pack_header(cfg: RunConfig) -> bytes:
    return struct.pack(
        _HEADER_FMT, MAGIC, VERSION, _MODES.index(cfg.mode), cfg.gop_size,
        int(round(cfg.lam * 16.0)), cfg.width, cfg.height, cfg.channels,
        cfg.seed & 0xFFFFFFFFFFFFFFFF, cfg.p_count, cfg.i_count,
        cfg.t_steps, cfg.t_inv, cfg.inter_start)


def parse_header(data: bytes) -> RunConfig:
    if len(data) < HEADER_SIZE:
        raise ContainerFormatError("container shorter than header")
    (magic, version, mode_idx, gop_size, lam16, width, height, channels, seed,
     p_count, i_count, t_steps, t_inv, start) = struct.unpack_from(_HEADER_FMT, data)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported container version {version}")
    if mode_idx >= len(_MODES):
        raise ContainerFormatError(f"unknown mode byte {mode_idx}")
    cfg = RunConfig(mode=_MODES[mode_idx], gop_size=gop_size, lam=lam16 / 16.0,
                    width=width, height=height, t_steps=t_steps, t_inv=t_inv,
                    p_count=p_count, i_count=i_count, seed=seed,
                    start_step="literal" if start == t_steps and t_inv != t_steps
                    else "consistent", channels=channels)
    cfg._header_start = start
    return cfg


def write_container(path, cfg: RunConfig, records) -> None:
    blob = bytearray(pack_header(cfg))
    for rec in records:
        blob += struct.pack("<BI", _FRAME_TYPES.index(rec.frame_type),
                            rec.payload.byte_length)
        blob += rec.payload.data
    _atomic_write(path, bytes(blob))


def read_container(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CliError(f"cannot read container: {e}", EXIT_IO)
    cfg = parse_header(data)
    pos = HEADER_SIZE
    payloads = []
    idx = 0
    while pos < len(data):
        if pos + 5 > len(data):
            raise CliError(f"frame {idx}: truncated frame header", EXIT_TRUNCATED)
        ftype, length = struct.unpack_from("<BI", data, pos)
        pos += 5
        if ftype >= len(_FRAME_TYPES):
            raise ContainerFormatError(f"frame {idx}: unknown frame type {ftype}")
        if pos + length > len(data):
            raise CliError(f"frame {idx}: truncated payload "
                           f"(need {length} bytes, have {len(data) - pos})",
                           EXIT_TRUNCATED)
        payloads.append((_FRAME_TYPES[ftype],
                         entropy.Bitpayload(data[pos:pos + length], 8 * length)))
        pos += length
        idx += 1
    return cfg, payloads


def _atomic_write(path, blob: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".i2vc-tmp-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise CliError(f"cannot write {path}: {e}", EXIT_IO)


# ---------------------------------------------------------------------------
# shared pipeline construction
# ---------------------------------------------------------------------------

def _build(cfg: RunConfig):
    transform = latent.LatentTransform(seed=cfg.seed, channels=cfg.channels)
    weights = stvc.make_weights(seed=cfg.seed, channels=cfg.channels)
    sched = diffusion.build_schedule(cfg.t_steps)
    pred = diffusion.SeededPredictor(seed=cfg.seed, channels=cfg.channels, sched=sched)
    return transform, weights, sched, pred


def _read_frames(input_dir, cfg: RunConfig):
    if not os.path.isdir(input_dir):
        raise CliError(f"input directory not found: {input_dir}", EXIT_IO)
    names = sorted(n for n in os.listdir(input_dir) if n.endswith(".rgb"))
    if not names:
        raise ConfigError(f"no .rgb frames in {input_dir}")
    frames = []
    for n in names:
        try:
            frames.append(latent.read_frame_rgb8(
                os.path.join(input_dir, n), cfg.height, cfg.width))
        except latent.DimensionError as e:
            raise ConfigError(str(e))
        except OSError as e:
            raise CliError(f"cannot read frame {n}: {e}", EXIT_IO)
    return frames


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_encode(args) -> int:
    cfg = config_from(args.config, args)
    frames = _read_frames(args.input, cfg)
    transform, weights, sched, pred = _build(cfg)
    records, _, _ = gop.encode_sequence(
        frames, cfg.gop_config(), cfg.lam, weights, sched, pred,
        transform=transform, seed=cfg.seed, t_inv=cfg.t_inv,
        start_step=cfg.inter_start)
    write_container(args.output, cfg, records)
    total_bits = sum(r.payload.bit_length for r in records)
    bpp = total_bits / (len(frames) * cfg.width * cfg.height)
    print(f"encoded {len(frames)} frames mode={cfg.mode} lambda={cfg.lam:g} "
          f"total_bpp={bpp:.6f} -> {args.output}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg, payloads = read_container(args.input)
    transform, weights, sched, pred = _build(cfg)
    n = len(payloads)
    if n == 0:
        raise ContainerFormatError("container holds no frames")
    latent_shape = (cfg.channels, cfg.height // 4, cfg.width // 4)
    # payloads are stored in coding order, grouped by GoP
    records = []
    pos = 0
    for g0 in range(0, n, cfg.gop_size):
        size = min(cfg.gop_size, n - g0)
        entries = gop.schedule(gop.chunk_config(cfg.gop_config(), size))
        for e in sorted(entries, key=lambda e: e.coding_order):
            ftype, payload = payloads[pos]
            if ftype != e.frame_type:
                raise CliError(
                    f"frame {g0 + e.display_index}: container type {ftype.value} "
                    f"does not match schedule {e.frame_type.value}", EXIT_ORDER)
            records.append(gop.FrameRecord(g0 + e.display_index, ftype, payload))
            pos += 1
    try:
        recons = gop.decode_sequence(
            records, n, cfg.gop_config(), cfg.lam, weights, sched, pred,
            transform=transform, latent_shape=latent_shape, seed=cfg.seed,
            t_inv=cfg.t_inv, start_step=getattr(cfg, "_header_start", cfg.inter_start))
    except entropy.TruncatedPayloadError as e:
        raise CliError(f"payload truncated: {e}", EXIT_TRUNCATED)
    except gop.MissingReferenceError as e:
        raise CliError(str(e), EXIT_ORDER)
    os.makedirs(args.output, exist_ok=True)
    for i, frame in enumerate(recons):
        latent.write_frame_rgb8(os.path.join(args.output, f"frame_{i:04d}.rgb"), frame)
    print(f"decoded {n} frames mode={cfg.mode} {cfg.width}x{cfg.height} -> {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = config_from(args.config, args)
    frames = _read_frames(args.input, cfg)
    transform, weights, sched, pred = _build(cfg)
    try:
        lam_grid = [snap_lambda(float(s)) for s in args.lambdas.split(",") if s]
    except ValueError:
        raise ConfigError(f"bad lambda grid {args.lambdas!r}")
    if not lam_grid:
        raise ConfigError("empty lambda grid")
    for lam in lam_grid:
        if not (stvc.LAMBDA_MIN <= lam <= stvc.LAMBDA_MAX):
            raise ConfigError(f"lambda {lam:g} outside [8, 512]")
    csv = harness.sweep_csv(frames, cfg.gop_config(), lam_grid, weights, sched, pred,
                            transform=transform, seed=cfg.seed, t_inv=cfg.t_inv,
                            start_step=cfg.inter_start, beta=cfg.beta,
                            include_frames=args.per_frame)
    if args.output:
        _atomic_write(args.output, csv.encode())
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(csv)
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = config_from(args.config, args)
    try:
        entries = gop.schedule(cfg.gop_config())
    except gop.InfeasibleGopError as e:
        raise ConfigError(str(e))
    sys.stdout.write(gop.dump_schedule(entries))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="i2vc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", help="key=value config file")
        p.add_argument("--mode", choices=_MODES)
        p.add_argument("--gop", type=int)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--tsteps", type=int)
        p.add_argument("--invsteps", dest="invsteps", type=int)
        p.add_argument("--pcount", type=int)
        p.add_argument("--icount", type=int)
        p.add_argument("--start-step", dest="start_step",
                       choices=("consistent", "literal"))

    enc = sub.add_parser("encode", help="encode raw frames into a container")
    enc.add_argument("input", help="directory of planar RGB .rgb frames")
    enc.add_argument("output", help="container path")
    common(enc)
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="decode a container into raw frames")
    dec.add_argument("input", help="container path")
    dec.add_argument("output", help="output frame directory")
    dec.set_defaults(func=cmd_decode)

    ev = sub.add_parser("eval", help="rate/quality sweep, CSV output")
    ev.add_argument("input", help="directory of planar RGB .rgb frames")
    ev.add_argument("--lambdas", default="8,64,512", help="comma-separated grid")
    ev.add_argument("--output", help="CSV path (default stdout)")
    ev.add_argument("--per-frame", action="store_true", help="emit per-frame rows")
    common(ev)
    ev.set_defaults(func=cmd_eval)

    sc = sub.add_parser("schedule", help="dump the GoP schedule")
    common(sc)
    sc.set_defaults(func=cmd_schedule)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"i2vc: error: {e}", file=sys.stderr)
        return e.code
    except gop.InfeasibleGopError as e:
        print(f"i2vc: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except entropy.TruncatedPayloadError as e:
        print(f"i2vc: error: {e}", file=sys.stderr)
        return EXIT_TRUNCATED


if __name__ == "__main__":
    sys.exit(main())
