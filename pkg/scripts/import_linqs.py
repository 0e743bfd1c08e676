"""Convert a LINQS ``.content``/``.cites`` pair into a dataset directory.

    python scripts/import_linqs.py cora.content cora.cites src/jsdmp/datasets/cora --gzip
"""

import argparse

from jsdmp.data import read_linqs, write_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("content")
    parser.add_argument("cites")
    parser.add_argument("out")
    parser.add_argument("--name", default="cora")
    parser.add_argument("--gzip", action="store_true")
    args = parser.parse_args()
    ds = read_linqs(args.content, args.cites, name=args.name)
    write_dataset(ds, args.out, compress=args.gzip)
    print(ds.stats())


if __name__ == "__main__":
    main()
