import json
import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch
from torch import nn

logger = logging.getLogger(__name__)

MAGIC = 'E2EW1'
ARCHITECTURES = ('linear', 'mlp')


class PricePredictor(nn.Module):
    """Maps a day's feature vector to the T hourly price centers. Runs in float64."""

    def __init__(self, in_dim: int, horizon: int, architecture: str = 'linear',
                 hidden: Sequence[int] = (128,)):
        super().__init__()
        if architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {architecture!r}")
        if in_dim < 1 or horizon < 1:
            raise ValueError(f"Need positive dimensions, got in_dim={in_dim}, horizon={horizon}")
        self.in_dim = in_dim
        self.horizon = horizon
        self.architecture = architecture
        self.hidden = tuple(int(h) for h in hidden) if architecture == 'mlp' else ()

        layers = []
        width = in_dim
        for size in self.hidden:
            layers += [nn.Linear(width, size), nn.ReLU()]
            width = size
        layers.append(nn.Linear(width, horizon))
        self.net = nn.Sequential(*layers).double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"Expected {self.in_dim} features, got {x.shape[-1]}")
        return self.net(x)


def predict_center(predictor: PricePredictor, x: Union[np.ndarray, torch.Tensor]) -> np.ndarray:
    features = torch.as_tensor(np.asarray(x, dtype=float))
    with torch.no_grad():
        return predictor(features).numpy()


def save_predictor(predictor: PricePredictor, path: Union[str, Path]):
    """
    One header line `E2EW1 <json>` followed by the float64 parameter blocks,
    little-endian, in state_dict order.
    """
    state = predictor.state_dict()
    header = {
        'architecture': predictor.architecture,
        'in_dim': predictor.in_dim,
        'horizon': predictor.horizon,
        'hidden': list(predictor.hidden),
        'endianness': 'little',
        'blocks': [[name, list(tensor.shape)] for name, tensor in state.items()],
    }
    with open(path, 'wb') as f:
        f.write(f"{MAGIC} {json.dumps(header, sort_keys=True)}\n".encode('utf-8'))
        for tensor in state.values():
            f.write(tensor.detach().cpu().numpy().astype('<f8').tobytes())
    logger.debug(f"Saved {predictor.architecture} predictor to {path}")


def load_predictor(path: Union[str, Path]) -> PricePredictor:
    with open(path, 'rb') as f:
        first = f.readline().decode('utf-8').rstrip('\n')
        payload = f.read()
    magic, _, body = first.partition(' ')
    if magic != MAGIC:
        raise ValueError(f"{path}: not a predictor weights file (header {magic!r})")
    header = json.loads(body)
    if header.get('endianness') != 'little':
        raise ValueError(f"{path}: unsupported endianness {header.get('endianness')!r}")

    predictor = PricePredictor(header['in_dim'], header['horizon'], header['architecture'],
                               header['hidden'] or (128,))
    state = {}
    offset = 0
    for name, shape in header['blocks']:
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(payload, dtype='<f8', count=count, offset=offset)
        state[name] = torch.from_numpy(block.astype(np.float64).reshape(shape))
        offset += 8 * count
    if offset != len(payload):
        raise ValueError(f"{path}: {len(payload) - offset} trailing bytes after parameter blocks")
    predictor.load_state_dict(state)
    return predictor
