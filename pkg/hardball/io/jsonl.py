"""JSON Lines event logs and single JSON documents"""

import contextlib
import json
import sys
from pathlib import Path
from typing import IO, Iterable, Iterator, List, Optional, TextIO, Union

from pydantic import BaseModel

from .records import EndRecord, EventRecord, HeaderRecord, end_for, header_for
from ..core.dynamics import TrajectorySegment
from ..core.model import Container
from ..core.product import PairRun, ProductRun
from ..utils.logging import setup_logging

logger = setup_logging()

PathLike = Union[str, Path]


@contextlib.contextmanager
def open_output(path: Optional[PathLike] = None) -> Iterator[TextIO]:
    """Writable text stream for path, or standard output when path is None or '-'"""
    if path is None or str(path) == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as stream:
        yield stream
    logger.info(f"Wrote {target}")


def write_records(records: Iterable[BaseModel], stream: IO[str]) -> int:
    count = 0
    for record in records:
        stream.write(record.model_dump_json())
        stream.write("\n")
        count += 1
    return count


def write_json(document: BaseModel, stream: IO[str], exclude: Optional[set] = None):
    """A single JSON document (reports, verdicts)"""
    stream.write(document.model_dump_json(indent=2, exclude=exclude))
    stream.write("\n")


def segment_records(seg: TrajectorySegment, seed: Optional[int] = None) -> Iterator[BaseModel]:
    yield header_for(seg, seed)
    for event in seg.events:
        yield EventRecord.from_event(event)
    yield end_for(seg)


def write_segment(seg: TrajectorySegment, stream: IO[str], seed: Optional[int] = None) -> int:
    """Header, one record per event, end record; returns the number of lines"""
    return write_records(segment_records(seg, seed), stream)


def write_pair_run(run: PairRun, stream: IO[str], seed: Optional[int] = None) -> int:
    records: List[BaseModel] = [HeaderRecord(seed=seed, subsystem="pair", rho=run.rho, initial=run.initial,
                                             container=Container.torus(run.initial.nu),
                                             scale="unit torus; positions and velocities halved, rho = r/2")]
    records.extend(EventRecord.from_pair_event(event) for event in run.events)
    records.append(EndRecord(t_end=run.t_end, n_events=len(run.events), final=run.final))
    return write_records(records, stream)


def write_product_run(run: ProductRun, rho: float, stream: IO[str], seed: Optional[int] = None) -> int:
    """Both subsystems as consecutive x and y logs"""
    count = 0
    nu = run.final.x.shape[0]
    for name, events in (("x", run.x_events), ("y", run.y_events)):
        records: List[BaseModel] = [HeaderRecord(seed=seed, subsystem=name, rho=rho,
                                                 container=Container.torus(nu, name="sinai"), scale="unit torus")]
        records.extend(EventRecord.from_scatterer_event(event) for event in events)
        records.append(EndRecord(t_end=run.t_end, n_events=len(events)))
        count += write_records(records, stream)
    return count


def parse_lines(lines: Iterable[str]) -> Iterator[BaseModel]:
    """Records from JSONL text, dispatched on their 'record' field"""
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        kind = json.loads(line).get("record", "event")
        if kind == "header":
            yield HeaderRecord.model_validate_json(line)
        elif kind == "end":
            yield EndRecord.model_validate_json(line)
        elif kind == "event":
            yield EventRecord.model_validate_json(line)
        else:
            raise ValueError(f"line {number}: unknown record type {kind!r}")


def read_segment(source: Union[PathLike, Iterable[str]]) -> TrajectorySegment:
    """Rebuild a TrajectorySegment from a billiard event log"""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as stream:
            records = list(parse_lines(stream))
    else:
        records = list(parse_lines(source))
    if not records or not isinstance(records[0], HeaderRecord):
        raise ValueError("event log does not start with a header record")
    header = records[0]
    if header.params is None or header.initial is None:
        raise ValueError("header lacks params or initial state; not a billiard event log")
    events = [r.to_event() for r in records if isinstance(r, EventRecord)]
    ends = [r for r in records if isinstance(r, EndRecord)]
    if not ends:
        raise ValueError("event log has no end record")
    end = ends[-1]
    container = header.container or header.params.container()
    return TrajectorySegment.model_construct(params=header.params, container=container, initial=header.initial,
                                             events=tuple(events), t_start=header.t_start, t_end=end.t_end,
                                             final=end.final, branch_warnings=tuple(end.branch_warnings))
