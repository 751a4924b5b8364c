from typing import Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .env import ACTIONS, MdpState


class QNetwork(nn.Module):
    """
    MLP from the normalized state (e / e_max, p / (B - 1), t / T) to one value
    per action, with ReLU after every hidden layer. Runs in float64.
    """

    def __init__(self, e_max: float, n_bins: int, horizon: int, hidden: Tuple[int, ...] = (64, 64)):
        super().__init__()
        layers = []
        width = 3
        for size in hidden:
            layers += [nn.Linear(width, size), nn.ReLU()]
            width = size
        layers.append(nn.Linear(width, len(ACTIONS)))
        self.body = nn.Sequential(*layers).double()
        self.register_buffer('scale', torch.tensor(
            [float(e_max), float(max(n_bins - 1, 1)), float(horizon)], dtype=torch.float64))
        self.hidden = tuple(hidden)

    def encode(self, states: Sequence[MdpState]) -> torch.Tensor:
        raw = torch.tensor([[s.e, s.p, s.t] for s in states], dtype=torch.float64)
        return raw / self.scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def q_forward(net: QNetwork, state: MdpState) -> np.ndarray:
    with torch.no_grad():
        return net(net.encode([state]))[0].numpy()
