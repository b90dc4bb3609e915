# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Versioned persistence of learned beam lists and subspace models.

File layout, all integers little-endian:

```
magic        8 bytes  b"MVLRSTOR"
version      u32
hash length  u32, then the UTF-8 config hash
seed         u64
block count  u32
blocks       name length u32, UTF-8 name, rows u32, cols u32,
             rows * cols complex128 values (interleaved real/imag float64, row-major)
```

Everything is stored as a named complex matrix; regions, beam indices and ranks are
encoded as short real rows so a single block type covers the whole file.
"""
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from mvlr.arrays import Side
from mvlr.beam_alignment import BeamList, BeamListEntry
from mvlr.errors import ConfigValidationError, FormatVersionError
from mvlr.estimation import NoiseAfterBf, SubspaceKind, SubspaceModel
from mvlr.numerics import inv_sqrt_hermitian
from mvlr.scenario import MvRegion

MAGIC = b"MVLRSTOR"
FORMAT_VERSION = 1

logger = logging.getLogger(__name__)


def config_hash(config: BaseModel) -> str:
    """SHA-256 of the canonical JSON dump of a configuration model."""
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()


@dataclass
class ArtifactStore:
    """Named complex matrices tagged with the configuration and seed that produced them."""

    config_hash: str
    seed: int
    matrices: Dict[str, np.ndarray] = field(default_factory=dict)

    def save(self, path: Union[str, Path]) -> None:
        """Write the store to `path`, replacing any existing file."""
        with open(path, "wb") as stream:
            stream.write(MAGIC)
            stream.write(struct.pack("<I", FORMAT_VERSION))
            _write_bytes(stream, self.config_hash.encode("utf-8"))
            stream.write(struct.pack("<Q", self.seed))
            stream.write(struct.pack("<I", len(self.matrices)))
            for name, matrix in self.matrices.items():
                matrix = np.atleast_2d(np.asarray(matrix, dtype="<c16"))
                _write_bytes(stream, name.encode("utf-8"))
                stream.write(struct.pack("<II", *matrix.shape))
                stream.write(np.ascontiguousarray(matrix).tobytes())
        logger.info("Saved %d matrices to %s", len(self.matrices), path)

    @classmethod
    def load(
        cls, path: Union[str, Path], expected_hash: Optional[str] = None
    ) -> "ArtifactStore":
        """Read a store written by `save`.

        Raises:
            FormatVersionError: if the magic string or version is foreign, or the file is
                truncated.
            ConfigValidationError: if `expected_hash` differs from the stored hash.
        """
        with open(path, "rb") as stream:
            if stream.read(len(MAGIC)) != MAGIC:
                raise FormatVersionError(f"{path} is not an mvlr store.")
            (version,) = _unpack(stream, "<I")
            if version != FORMAT_VERSION:
                raise FormatVersionError(
                    f"{path} has format version {version}, expected {FORMAT_VERSION}."
                )
            stored_hash = _read_bytes(stream).decode("utf-8")
            if expected_hash is not None and stored_hash != expected_hash:
                raise ConfigValidationError(
                    f"{path} was produced with a different configuration "
                    f"(hash {stored_hash[:12]}, expected {expected_hash[:12]})."
                )
            (seed,) = _unpack(stream, "<Q")
            (count,) = _unpack(stream, "<I")
            matrices = {}
            for _ in range(count):
                name = _read_bytes(stream).decode("utf-8")
                rows, cols = _unpack(stream, "<II")
                payload = stream.read(rows * cols * 16)
                if len(payload) != rows * cols * 16:
                    raise FormatVersionError(f"{path} is truncated in block {name!r}.")
                matrices[name] = np.frombuffer(payload, dtype="<c16").reshape(rows, cols).copy()
        return cls(stored_hash, seed, matrices)


def _write_bytes(stream: BinaryIO, payload: bytes) -> None:
    stream.write(struct.pack("<I", len(payload)))
    stream.write(payload)


def _read_bytes(stream: BinaryIO) -> bytes:
    (length,) = _unpack(stream, "<I")
    payload = stream.read(length)
    if len(payload) != length:
        raise FormatVersionError("Store is truncated.")
    return payload


def _unpack(stream: BinaryIO, layout: str) -> Tuple[int, ...]:
    size = struct.calcsize(layout)
    payload = stream.read(size)
    if len(payload) != size:
        raise FormatVersionError("Store is truncated.")
    return struct.unpack(layout, payload)


def _row(values) -> np.ndarray:
    return np.asarray(values, dtype=np.complex128).reshape(1, -1)


def _region_row(region: MvRegion) -> np.ndarray:
    return _row([*region.center, region.heading, region.radius])


def _region_from_row(row: np.ndarray) -> MvRegion:
    x, y, z, heading, radius = row.real.reshape(-1).tolist()
    return MvRegion(center=(x, y, z), heading=heading, radius=radius)


def pack_beam_lists(tx_list: BeamList, rx_list: BeamList) -> Dict[str, np.ndarray]:
    """Encode L_F and L_W as named matrices."""
    matrices = {"beams/heading-threshold": _row([tx_list.heading_threshold])}
    for beam_list in (tx_list, rx_list):
        for index, entry in enumerate(beam_list.entries):
            prefix = f"beams/{beam_list.side.value}/{index}"
            matrices[f"{prefix}/analog"] = entry.analog_matrix
            matrices[f"{prefix}/region"] = _region_row(entry.region)
            matrices[f"{prefix}/indices"] = _row(entry.beam_indices or [-1])
    return matrices


def unpack_beam_lists(matrices: Mapping[str, np.ndarray]) -> Tuple[BeamList, BeamList]:
    """Decode the beam lists written by `pack_beam_lists`."""
    threshold = float(matrices["beams/heading-threshold"].real[0, 0])
    lists = []
    for side in (Side.TX, Side.RX):
        entries = []
        index = 0
        while f"beams/{side.value}/{index}/analog" in matrices:
            prefix = f"beams/{side.value}/{index}"
            indices = tuple(int(i) for i in matrices[f"{prefix}/indices"].real.reshape(-1))
            entries.append(
                BeamListEntry(
                    matrices[f"{prefix}/analog"],
                    _region_from_row(matrices[f"{prefix}/region"]),
                    () if indices == (-1,) else indices,
                )
            )
            index += 1
        lists.append(BeamList(side, tuple(entries), threshold))
    return lists[0], lists[1]


def pack_models(models: Mapping[Tuple[str, int], SubspaceModel]) -> Dict[str, np.ndarray]:
    """Encode fitted models keyed by (estimator name, region index)."""
    matrices = {}
    for (estimator, region_index), model in models.items():
        prefix = f"models/{estimator}/{region_index}"
        matrices[f"{prefix}/kind"] = _row([0 if model.kind == SubspaceKind.JOINT else 1])
        matrices[f"{prefix}/ranks"] = _row(model.ranks)
        matrices[f"{prefix}/q-tilde"] = model.noise.q_tilde
        matrices[f"{prefix}/noise"] = _row([model.noise.sigma_s_sq, model.noise.n_tx_rf])
        if model.kind == SubspaceKind.JOINT:
            matrices[f"{prefix}/basis"] = model.basis
        else:
            matrices[f"{prefix}/tx-basis"] = model.tx_basis
            matrices[f"{prefix}/rx-basis"] = model.rx_basis
        if model.region is not None:
            matrices[f"{prefix}/region"] = _region_row(model.region)
    return matrices


def unpack_models(matrices: Mapping[str, np.ndarray]) -> Dict[Tuple[str, int], SubspaceModel]:
    """Decode the models written by `pack_models`."""
    models = {}
    for name in matrices:
        parts = name.split("/")
        if len(parts) != 4 or parts[0] != "models" or parts[3] != "kind":
            continue
        prefix = "/".join(parts[:3])
        q_tilde = matrices[f"{prefix}/q-tilde"]
        sigma_s_sq, n_tx_rf = matrices[f"{prefix}/noise"].real.reshape(-1).tolist()
        noise = NoiseAfterBf(q_tilde, sigma_s_sq, int(n_tx_rf), *inv_sqrt_hermitian(q_tilde))
        joint = int(matrices[name].real[0, 0]) == 0
        region_row = matrices.get(f"{prefix}/region")
        models[(parts[1], int(parts[2]))] = SubspaceModel(
            kind=SubspaceKind.JOINT if joint else SubspaceKind.DISJOINT,
            noise=noise,
            ranks=tuple(int(r) for r in matrices[f"{prefix}/ranks"].real.reshape(-1)),
            basis=matrices[f"{prefix}/basis"] if joint else None,
            tx_basis=None if joint else matrices[f"{prefix}/tx-basis"],
            rx_basis=None if joint else matrices[f"{prefix}/rx-basis"],
            region=None if region_row is None else _region_from_row(region_row),
        )
    return models
