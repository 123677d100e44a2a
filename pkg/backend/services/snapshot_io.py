"""
文件读写 - 二进制场快照、诊断 CSV 与运行清单
"""

import json
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from core import __version__
from core.config import settings
from core.errors import SnapshotFormatError
from models.field import PeriodicGrid
from models.run_config import RunConfig
from models.simulation import State, StepReport, flatten_report

HEADER_DTYPE = np.dtype("<u4")
FLOAT_DTYPE = np.dtype("<f8")


def snapshot_name(step: int) -> str:
    return f"state_{step:08d}.fxd"


def encode_snapshot(state: State) -> bytes:
    """magic | version | d | n | dims[d] | L | t | n 个行主序 float64 数组（小端）"""
    grid = state.grid
    header = np.array([settings.SNAPSHOT_VERSION, grid.d, state.n] + [grid.N] * grid.d, dtype=HEADER_DTYPE)
    scalars = np.array([grid.L, state.t], dtype=FLOAT_DTYPE)
    payload = np.ascontiguousarray(state.stack(), dtype=FLOAT_DTYPE)
    return settings.SNAPSHOT_MAGIC.encode("ascii") + header.tobytes() + scalars.tobytes() + payload.tobytes()


def decode_snapshot(data: bytes) -> State:
    magic = settings.SNAPSHOT_MAGIC.encode("ascii")
    if data[:4] != magic:
        raise SnapshotFormatError(f"文件头魔数 {data[:4]!r} 不是 {magic!r}")
    offset = 4
    if len(data) < offset + 3 * HEADER_DTYPE.itemsize:
        raise SnapshotFormatError("文件头被截断")
    version, d, n = np.frombuffer(data, dtype=HEADER_DTYPE, count=3, offset=offset)
    offset += 3 * HEADER_DTYPE.itemsize
    if version != settings.SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"不支持的快照版本 {version}")
    if d < 1 or n < 1:
        raise SnapshotFormatError(f"文件头不一致: d={d}, n={n}")

    dims = np.frombuffer(data, dtype=HEADER_DTYPE, count=int(d), offset=offset)
    offset += int(d) * HEADER_DTYPE.itemsize
    if len(set(int(x) for x in dims)) != 1:
        raise SnapshotFormatError(f"仅支持各轴点数相同的网格，得到 {dims.tolist()}")
    L, t = np.frombuffer(data, dtype=FLOAT_DTYPE, count=2, offset=offset)
    offset += 2 * FLOAT_DTYPE.itemsize

    count = int(n) * int(np.prod(dims.astype(np.int64)))
    expected = offset + count * FLOAT_DTYPE.itemsize
    if len(data) != expected:
        raise SnapshotFormatError(f"数据长度 {len(data)} 与文件头推算的 {expected} 不符")

    grid = PeriodicGrid(d=int(d), N=int(dims[0]), L=float(L))
    payload = np.frombuffer(data, dtype=FLOAT_DTYPE, count=count, offset=offset)
    arrays = payload.astype(np.float64).reshape((int(n),) + grid.shape)
    return State.from_arrays(float(t), grid, arrays)


def write_snapshot(path: str, state: State) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_snapshot(state))
    logger.debug(f"快照已写入: {path} (t={state.t:.6g})")
    return path


def read_snapshot(path: str) -> State:
    with open(path, "rb") as f:
        return decode_snapshot(f.read())


class DiagnosticsWriter:
    """diagnostics.csv 追加写入；缓冲的行在快照边界刷新"""

    def __init__(self, path: str):
        self.path = path
        self._pending: List[Dict[str, float]] = []
        self._header_written = False
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if os.path.exists(path):
            os.remove(path)

    def append(self, report: StepReport) -> None:
        self._pending.append(flatten_report(report))

    def flush(self) -> None:
        if not self._pending:
            return
        frame = pd.DataFrame(self._pending)
        frame.to_csv(
            self.path,
            mode="a",
            header=not self._header_written,
            index=False,
            float_format="%.17g",
            encoding="utf-8",
        )
        self._header_written = True
        self._pending.clear()


class SnapshotObserver:
    """run_simulation 的观察者：写诊断行，并在快照边界写 state_<step>.fxd"""

    def __init__(self, directory: str):
        self.directory = directory
        self.diagnostics = DiagnosticsWriter(os.path.join(directory, "diagnostics.csv"))
        self.written: List[str] = []

    def __call__(self, report: StepReport, snapshot: Optional[State] = None) -> None:
        self.diagnostics.append(report)
        if snapshot is not None:
            path = os.path.join(self.directory, snapshot_name(report.step))
            self.written.append(write_snapshot(path, snapshot))
            self.diagnostics.flush()

    def close(self) -> None:
        self.diagnostics.flush()


def write_manifest(
    directory: str,
    config: RunConfig,
    command: str,
    selections: Dict[str, Any],
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """run_manifest.txt：配置回显、版本与各项设计选择（JSON 文档）"""
    manifest = {
        "tool": settings.APP_NAME,
        "version": __version__,
        "command": command,
        "created_at": datetime.now().isoformat(timespec="seconds"),
        "config": config.model_dump(mode="json", exclude={"source"}),
        "source": config.source,
        "selections": selections,
        "tolerances": settings.tolerance_summary(),
    }
    if extra:
        manifest.update(extra)
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "run_manifest.txt")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=False)
        f.write("\n")
    return path


def list_snapshots(directory: str) -> List[str]:
    names = sorted(
        name for name in os.listdir(directory)
        if name.startswith("state_") and name.endswith(".fxd")
    )
    return [os.path.join(directory, name) for name in names]
