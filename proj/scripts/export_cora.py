#!/usr/bin/env python3
# Copyright 2026 The FedVGCN Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Rebuilds data/cora/{cora.content,cora.cites} in the LINQS text layout.

The LINQS Cora release ships inside the graphdatascience wheel on PyPI as
two parquet files. This script fetches that wheel, reads the parquet files
and writes tab-separated text:

  cora.content: <paper_id> <tab> <1433 binary words> <tab> <class name>
  cora.cites:   <citing paper> <tab> <cited paper>

Usage: export_cora.py [--wheel PATH] [--out DIR]
"""

import argparse
import io
import json
import pathlib
import urllib.request
import zipfile

import pandas as pd

WHEEL_INDEX = "https://pypi.org/pypi/graphdatascience/2.1.0/json"
RESOURCE = "graphdatascience/resources/cora/"
SUBJECTS = [
    "Neural_Networks",
    "Rule_Learning",
    "Reinforcement_Learning",
    "Probabilistic_Methods",
    "Theory",
    "Genetic_Algorithms",
    "Case_Based",
]


def fetch_wheel() -> bytes:
    with urllib.request.urlopen(WHEEL_INDEX, timeout=60) as resp:
        meta = json.load(resp)
    url = next(u["url"] for u in meta["urls"] if u["filename"].endswith(".whl"))
    with urllib.request.urlopen(url, timeout=600) as resp:
        return resp.read()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--wheel", type=pathlib.Path)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/cora"))
    args = parser.parse_args()

    blob = args.wheel.read_bytes() if args.wheel else fetch_wheel()
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        nodes = pd.read_parquet(io.BytesIO(zf.read(RESOURCE + "cora_nodes.parquet.gzip")))
        rels = pd.read_parquet(io.BytesIO(zf.read(RESOURCE + "cora_rels.parquet.gzip")))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "cora.content", "w") as f:
        for node, subject, feats in zip(nodes.nodeId, nodes.subject, nodes.features):
            words = "\t".join(str(int(v)) for v in feats)
            f.write(f"{node}\t{words}\t{SUBJECTS[int(subject)]}\n")
    with open(args.out / "cora.cites", "w") as f:
        for src, dst in zip(rels.sourceNodeId, rels.targetNodeId):
            f.write(f"{src}\t{dst}\n")
    print(f"wrote {len(nodes)} nodes and {len(rels)} citation rows to {args.out}")


if __name__ == "__main__":
    main()
