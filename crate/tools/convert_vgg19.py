#!/usr/bin/env python3
"""Convert torchvision VGG19 weights into the safetensors layout read by
`FeatureExtractor::from_weight_file` (tensors `conv1_1.weight`, `conv1_1.bias`,
... up to `conv4_3`, stored as float32).

    python tools/convert_vgg19.py --out vgg19.safetensors
    python tools/convert_vgg19.py --state-dict vgg19.pth --out vgg19.safetensors

Without --state-dict the ImageNet weights are fetched through torchvision.
"""

import argparse
import json
import struct

import numpy as np

# Index of each convolution inside torchvision's `vgg19().features`.
LAYERS = {
    "conv1_1": 0,
    "conv1_2": 2,
    "conv2_1": 5,
    "conv2_2": 7,
    "conv3_1": 10,
    "conv3_2": 12,
    "conv3_3": 14,
    "conv3_4": 16,
    "conv4_1": 19,
    "conv4_2": 21,
    "conv4_3": 23,
}


def load_state_dict(path):
    import torch

    if path:
        return torch.load(path, map_location="cpu")
    from torchvision.models import VGG19_Weights, vgg19

    return vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()


def write_safetensors(path, tensors, metadata):
    header = {"__metadata__": metadata}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = data.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(data.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        offset += len(raw)
        blobs.append(raw)
    encoded = json.dumps(header, separators=(",", ":")).encode()
    encoded += b" " * (-len(encoded) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(encoded)))
        f.write(encoded)
        for raw in blobs:
            f.write(raw)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--state-dict", help="torchvision vgg19 state dict (.pth); fetched when omitted")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    state = load_state_dict(args.state_dict)
    tensors = {}
    for name, index in LAYERS.items():
        tensors[f"{name}.weight"] = state[f"features.{index}.weight"].numpy()
        tensors[f"{name}.bias"] = state[f"features.{index}.bias"].numpy()
    write_safetensors(args.out, tensors, {"source": "torchvision vgg19 IMAGENET1K_V1", "layout": "OIHW"})
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
