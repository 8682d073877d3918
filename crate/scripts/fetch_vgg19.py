#!/usr/bin/env python3
"""Convert torchvision's pre-trained VGG-19 weights into the named-tensor
archive consumed by the style-loss feature extractor.

Usage:
    python scripts/fetch_vgg19.py [--output assets/vgg19.st]

Requires torch and torchvision; the first run downloads ~550 MB of weights,
which torchvision caches under ~/.cache/torch. Only the thirteen
convolutions up to conv5_1 are kept (the taps the style loss reads), so the
resulting archive is about 40 MB.

The archive layout is safetensors-compatible: an 8-byte little-endian header
length, a JSON header with a `__metadata__` string map and per-tensor
dtype/shape/offset entries, then the raw little-endian payload. A SHA-256 of
the payload goes into the metadata and is verified by the loader.
"""

import argparse
import hashlib
import json
import struct
import sys

# Archive layer name -> index into torchvision's vgg19().features.
LAYERS = [
    ("conv1_1", 0),
    ("conv1_2", 2),
    ("conv2_1", 5),
    ("conv2_2", 7),
    ("conv3_1", 10),
    ("conv3_2", 12),
    ("conv3_3", 14),
    ("conv3_4", 16),
    ("conv4_1", 19),
    ("conv4_2", 21),
    ("conv4_3", 23),
    ("conv4_4", 25),
    ("conv5_1", 28),
]

# ImageNet channel statistics matching torchvision's published preprocessing.
MEAN = [0.485, 0.456, 0.406]
STD = [0.229, 0.224, 0.225]


def write_archive(path, tensors, metadata):
    payload = bytearray()
    entries = {}
    for name in sorted(tensors):
        arr = tensors[name]
        start = len(payload)
        payload.extend(arr.tobytes())
        entries[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": (start, len(payload)),
        }
    metadata = dict(metadata)
    metadata["payload_sha256"] = hashlib.sha256(bytes(payload)).hexdigest()
    header = {"__metadata__": metadata}
    header.update(entries)
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--output", default="assets/vgg19.st")
    args = parser.parse_args()

    try:
        import numpy as np  # noqa: F401
        import torchvision
    except ImportError as e:
        sys.exit(f"missing dependency ({e}); install torch and torchvision first")

    weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
    model = torchvision.models.vgg19(weights=weights)
    features = model.features.state_dict()

    tensors = {}
    for name, idx in LAYERS:
        w = features[f"{idx}.weight"].numpy().astype("<f4")
        b = features[f"{idx}.bias"].numpy().astype("<f4")
        tensors[f"{name}.weight"] = w
        tensors[f"{name}.bias"] = b

    metadata = {
        "preprocess.mean": json.dumps(MEAN),
        "preprocess.std": json.dumps(STD),
        "source": "torchvision vgg19 IMAGENET1K_V1",
    }
    write_archive(args.output, tensors, metadata)
    total = sum(t.size for t in tensors.values())
    print(f"wrote {args.output}: {len(tensors)} tensors, {total} parameters")


if __name__ == "__main__":
    main()
