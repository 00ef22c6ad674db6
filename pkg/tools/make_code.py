"""Regenerate the shipped (3,6)-regular 504x252 parity-check matrix."""

import sys

from dopplersync import codec

SEED = 20240601


def main(path=codec.DEFAULT_ALIST):
    H = codec.peg_regular(504, 252, 3, seed=SEED)
    codec.write_alist(H, path)
    print(f"wrote {path}: rank={H.rank} k={H.k} girth={codec.girth(H)}")


if __name__ == "__main__":
    main(*sys.argv[1:])
