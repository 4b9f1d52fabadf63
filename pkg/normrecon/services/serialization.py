"""
JSON documents for networks and reports.

Every network kind converts to a pydantic payload discriminated on ``kind``; loading
validates the document and rebuilds the numpy-backed domain objects, so shape errors
surface as ShapeMismatchError from the domain constructors.
"""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, TypeAdapter, ValidationError

from normrecon.errors import ShapeMismatchError
from normrecon.models.network import (
    FrozenWideStack,
    NormParams,
    SkipBlock,
    SkipBlockStack,
    SkipLayer,
    TargetLayer,
    TargetNetwork,
    WidePair,
)
from normrecon.models.payload import (
    MatrixPayload,
    NetworkPayload,
    NormPayload,
    SkipBlockPayload,
    SkipLayerPayload,
    SkipNetworkPayload,
    TargetLayerPayload,
    TargetNetworkPayload,
    WideNetworkPayload,
    WidePairPayload,
)
from normrecon.services.netmodel import Network

logger = logging.getLogger(__name__)

_network_adapter = TypeAdapter(NetworkPayload)


def matrix_payload(m: np.ndarray) -> MatrixPayload:
    m = np.asarray(m, dtype=np.float64)
    return MatrixPayload(rows=m.shape[0], cols=m.shape[1], data=m.ravel().tolist())


def matrix_from_payload(payload: MatrixPayload) -> np.ndarray:
    return np.asarray(payload.data, dtype=np.float64).reshape(payload.rows, payload.cols)


def _norm_payload(norm: NormParams) -> NormPayload:
    return NormPayload(
        scale=norm.scale.tolist(),
        shift=norm.shift.tolist(),
        mean=norm.mean.tolist(),
        variance=norm.variance.tolist(),
    )


def _norm_from_payload(payload: NormPayload) -> NormParams:
    return NormParams(payload.scale, payload.shift, payload.mean, payload.variance)


def network_payload(network: Network, seed: int | None = None):
    if isinstance(network, TargetNetwork):
        return TargetNetworkPayload(
            input_dim=network.input_dim,
            seed=seed,
            layers=[
                TargetLayerPayload(
                    scale=layer.scale.tolist(),
                    weight=matrix_payload(layer.weight),
                    shift=layer.shift.tolist(),
                )
                for layer in network.layers
            ],
        )
    if isinstance(network, FrozenWideStack):
        return WideNetworkPayload(
            input_dim=network.input_dim,
            seed=seed,
            layers=[
                WidePairPayload(
                    w_odd=matrix_payload(pair.w_odd),
                    w_even=matrix_payload(pair.w_even),
                    norm_odd=_norm_payload(pair.norm_odd),
                    norm_even=_norm_payload(pair.norm_even),
                )
                for pair in network.pairs
            ],
        )
    if isinstance(network, SkipBlockStack):
        return SkipNetworkPayload(
            input_dim=network.input_dim,
            seed=seed,
            chunk=network.chunk,
            layers=[
                SkipLayerPayload(
                    blocks=[
                        SkipBlockPayload(
                            weight=matrix_payload(block.weight),
                            projection=matrix_payload(block.projection),
                            norm=_norm_payload(block.norm),
                        )
                        for block in layer.blocks
                    ],
                    output=matrix_payload(layer.output),
                    chunk=layer.chunk,
                    in_dim=layer.in_dim,
                )
                for layer in network.layers
            ],
        )
    raise TypeError(f"Unsupported network type: {type(network).__name__}")


def network_from_payload(payload) -> Network:
    if isinstance(payload, TargetNetworkPayload):
        layers = tuple(
            TargetLayer(layer.scale, matrix_from_payload(layer.weight), layer.shift) for layer in payload.layers
        )
        return TargetNetwork(layers, payload.input_dim)

    if isinstance(payload, WideNetworkPayload):
        stack = FrozenWideStack(
            tuple(
                WidePair(
                    matrix_from_payload(pair.w_odd),
                    matrix_from_payload(pair.w_even),
                    _norm_from_payload(pair.norm_odd),
                    _norm_from_payload(pair.norm_even),
                )
                for pair in payload.layers
            )
        )
        if stack.input_dim != payload.input_dim:
            raise ShapeMismatchError(f"Wide network input_dim {payload.input_dim} does not match its first pair")
        return stack

    stack = SkipBlockStack(
        tuple(
            SkipLayer(
                blocks=tuple(
                    SkipBlock(
                        matrix_from_payload(block.weight),
                        matrix_from_payload(block.projection),
                        _norm_from_payload(block.norm),
                    )
                    for block in layer.blocks
                ),
                output=matrix_from_payload(layer.output),
                chunk=layer.chunk,
                in_dim=layer.in_dim,
            )
            for layer in payload.layers
        ),
        chunk=payload.chunk,
    )
    if stack.input_dim != payload.input_dim:
        raise ShapeMismatchError(f"Skip network input_dim {payload.input_dim} does not match its first layer")
    return stack


def dumps_network(network: Network, seed: int | None = None) -> str:
    return network_payload(network, seed).model_dump_json()


def loads_network(document: str | bytes) -> Network:
    """
    Raises:
        ShapeMismatchError: the document is not a valid network of a known kind.
    """
    try:
        payload = _network_adapter.validate_json(document)
    except ValidationError as e:
        raise ShapeMismatchError(f"Invalid network document: {e.error_count()} validation errors\n{e}") from e
    return network_from_payload(payload)


def save_network(network: Network, path: str | Path, seed: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_network(network, seed))
    logger.info(f"Saved {type(network).__name__} to {path}")
    return path


def load_network(path: str | Path) -> Network:
    return loads_network(Path(path).read_text())


def save_model(model: BaseModel, path: str | Path) -> Path:
    """Write any report or config model as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2))
    return path
