#!/usr/bin/env python3
"""Convert the English digits of the Spiking Heidelberg Digits HDF5 files
into an EVST directory tree that `spikefuse convert` understands.

Usage: shd_to_evst.py shd_train.h5 shd_test.h5 OUT_DIR

Writes OUT_DIR/{train,test}/<digit>/<index>.evst. Channel = cochlear unit
id (0-699), t = spike time in microseconds, rounded to nearest.
"""
import struct
import sys
from pathlib import Path

import h5py
import numpy as np

MAGIC = b"EVST"
VERSION = 1
CHANNELS = 700


def write_evst(path, times_s, units):
    t_us = np.rint(np.asarray(times_s, dtype=np.float64) * 1e6).astype(np.uint64)
    units = np.asarray(units, dtype=np.uint64)
    order = np.lexsort((units, t_us))
    t_us, units = t_us[order], units[order]
    if len(units) and units.max() >= CHANNELS:
        raise ValueError(f"{path}: unit {units.max()} out of range")
    records = np.zeros(len(t_us), dtype=[("t", "<u4"), ("c", "<u2"), ("r", "<u2")])
    records["t"] = t_us
    records["c"] = units
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<HHQ", VERSION, CHANNELS, len(t_us)))
        f.write(records.tobytes())


def convert(h5_path, split, out):
    with h5py.File(h5_path, "r") as f:
        times = f["spikes"]["times"]
        units = f["spikes"]["units"]
        labels = np.asarray(f["labels"])
        kept = 0
        for i, label in enumerate(labels):
            if label >= 10:  # German digits
                continue
            d = out / split / str(int(label))
            d.mkdir(parents=True, exist_ok=True)
            write_evst(d / f"{i:05d}.evst", times[i], units[i])
            kept += 1
    print(f"{h5_path}: {kept} English instances -> {out / split}")


def main():
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    out = Path(sys.argv[3])
    convert(sys.argv[1], "train", out)
    convert(sys.argv[2], "test", out)


if __name__ == "__main__":
    main()
