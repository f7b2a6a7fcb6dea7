"""
From AllResults.csv to baseline-corrected rates, a security-level table,
charts and a fleet-scale savings estimate.

Background power is fitted from the NULL runs (a sleep instead of a key
generation) as total energy over total time, then subtracted from each
workload run in proportion to its duration:

    net_joules = gross_joules - background_watts * wall_seconds

Rates are per 1,000 key generations.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from keybench import common
from keybench.configfile import read_llsd

logger = logging.getLogger('keybench.analysis')

ALL_RESULTS_FILE = 'AllResults.csv'
ALL_RESULTS_COLUMNS = ('timestamp', 'algorithm', 'iterations', 'gross_joules', 'wall_seconds',
                       'joules_per_1000', 'seconds_per_1000', 'status')
NULL_LABEL = 'NULL'
STATUS_OK = 'ok'

LEVELS_FILE = os.path.join(os.path.dirname(__file__), 'data', 'levels.xml')
LEVELS_TYPE = 'keybench-levels'

# TC66C vendor accuracy; energy is V x I so the relative bounds add
VOLTAGE_ACCURACY = 0.0005
CURRENT_ACCURACY = 0.001
# a session's energy is the difference of two floored mWh counters
SESSION_QUANTUM_JOULES = 3.6

JOULES_PER_KWH = 3.6e6


class AnalysisError(common.KeybenchError):
    pass


class UnmappedAlgorithmError(AnalysisError):
    def __init__(self, algorithm_label):
        super(UnmappedAlgorithmError, self).__init__(
            "algorithm '%s' has no security-level entry" % algorithm_label)
        self.algorithm_label = algorithm_label


def mwh_to_joules(mwh):
    if mwh < 0:
        raise AnalysisError("negative energy %r mWh" % mwh)
    # *36/10 keeps whole mWh exact to the last printed digit
    return mwh * 36 / 10


@dataclass(frozen=True)
class BaselineModel:
    background_watts: float
    source_runs: int
    total_null_seconds: float

    @property
    def uncorrected(self) -> bool:
        return self.source_runs == 0

    @classmethod
    def zero(cls) -> 'BaselineModel':
        return cls(0.0, 0, 0.0)


def fit_baseline(null_results: Sequence[Tuple[float, float]]) -> BaselineModel:
    """Duration-weighted mean power of the NULL runs: sum(gross) / sum(wall)."""
    if not null_results:
        raise AnalysisError("no NULL runs to fit a baseline from")
    for gross, wall in null_results:
        if wall <= 0:
            raise AnalysisError("NULL run with non-positive duration %r s" % wall)
        if gross < 0:
            raise AnalysisError("NULL run with negative energy %r J" % gross)
    total_joules = math.fsum(gross for gross, _ in null_results)
    total_seconds = math.fsum(wall for _, wall in null_results)
    return BaselineModel(total_joules / total_seconds, len(null_results), total_seconds)


@dataclass(frozen=True)
class ExperimentResult:
    algorithm_label: str
    iterations: int
    gross_joules: float
    wall_seconds: float
    net_joules: float
    joules_per_1000_net: float
    seconds_per_1000: float
    clamped: bool = False
    runs: int = 1


def net_rate(gross_joules: float, wall_seconds: float, iterations: int, baseline: BaselineModel,
             algorithm_label: str = '') -> ExperimentResult:
    if iterations < 1:
        raise AnalysisError("iterations must be >= 1, not %r" % iterations)
    if wall_seconds <= 0:
        raise AnalysisError("duration must be > 0, not %r s" % wall_seconds)
    net = gross_joules - baseline.background_watts * wall_seconds
    clamped = net < 0
    if clamped:
        logger.warning("%s: net energy %.3f J below zero, clamped" % (algorithm_label or 'run', net))
        net = 0.0
    return ExperimentResult(algorithm_label, iterations, gross_joules, wall_seconds, net,
                            net / iterations * 1000, wall_seconds / iterations * 1000, clamped)


def pool_results(results: Sequence[ExperimentResult], algorithm_label: Optional[str] = None) -> ExperimentResult:
    """Several runs of one algorithm as one: sums of energy, time and iterations."""
    if not results:
        raise AnalysisError("nothing to pool")
    iterations = sum(r.iterations for r in results)
    gross = math.fsum(r.gross_joules for r in results)
    wall = math.fsum(r.wall_seconds for r in results)
    net = math.fsum(r.net_joules for r in results)
    return ExperimentResult(algorithm_label or results[0].algorithm_label, iterations, gross, wall, net,
                            net / iterations * 1000, wall / iterations * 1000,
                            any(r.clamped for r in results), sum(r.runs for r in results))


class Category(enum.Enum):
    CLASSIC = 'Classic'
    ELLIPTIC_CURVE = 'EllipticCurve'
    POST_QUANTUM = 'PostQuantum'


# within a level: elliptic curve, then post-quantum, then classic
CATEGORY_ORDER = {Category.ELLIPTIC_CURVE: 0, Category.POST_QUANTUM: 1, Category.CLASSIC: 2}
CATEGORY_COLORS = {Category.POST_QUANTUM: 'tab:blue',
                   Category.ELLIPTIC_CURVE: 'tab:green',
                   Category.CLASSIC: 'tab:orange'}


@dataclass(frozen=True)
class SecurityLevelEntry:
    algorithm_label: str
    nist_level: int
    category: Category
    equiv_bits: int
    approximate: bool = False
    name: str = ''
    aliases: Tuple[str, ...] = ()
    note: str = ''
    position: int = 0

    @property
    def protocol(self) -> str:
        return self.name or self.algorithm_label

    @property
    def equiv_bits_text(self) -> str:
        return ("~%d" if self.approximate else "%d") % self.equiv_bits

    def labels(self) -> Tuple[str, ...]:
        return (self.algorithm_label, self.protocol) + tuple(self.aliases)


class LevelMap(object):
    """Security-level entries looked up by algorithm descriptor, display name or alias."""

    def __init__(self, entries: Iterable[SecurityLevelEntry]):
        self.entries = list(entries)
        self._by_label: Dict[str, SecurityLevelEntry] = {}
        for entry in self.entries:
            for label in entry.labels():
                other = self._by_label.get(label)
                if other is not None and other is not entry:
                    raise AnalysisError("'%s' names both %s and %s" % (label, other.protocol, entry.protocol))
                self._by_label[label] = entry

    def __contains__(self, label):
        return label in self._by_label

    def __len__(self):
        return len(self.entries)

    def lookup(self, label: str) -> SecurityLevelEntry:
        try:
            return self._by_label[label]
        except KeyError:
            raise UnmappedAlgorithmError(label)


def load_levels(path: Optional[str] = None) -> LevelMap:
    path = path or LEVELS_FILE
    data = read_llsd(path, 'security-level file')
    if not isinstance(data, dict) or not isinstance(data.get('levels'), list):
        raise common.ConfigurationError("security-level file %s has no 'levels' array" % path)
    if data.get('type', LEVELS_TYPE) != LEVELS_TYPE:
        raise common.ConfigurationError("%s is not a security-level file" % path)
    entries = []
    for position, item in enumerate(data['levels']):
        try:
            level = int(item['level'])
            category = Category(item['category'])
            entry = SecurityLevelEntry(algorithm_label=item['algorithm'],
                                       nist_level=level,
                                       category=category,
                                       equiv_bits=int(item['equiv_bits']),
                                       approximate=bool(item.get('approximate', False)),
                                       name=item.get('name', ''),
                                       aliases=tuple(item.get('aliases') or ()),
                                       note=item.get('note', ''),
                                       position=position)
        except (KeyError, TypeError, ValueError) as err:
            raise common.ConfigurationError("security-level file %s, entry %d: %s" % (path, position + 1, err))
        if not 1 <= level <= 5:
            raise common.ConfigurationError("security-level file %s, entry %d: level %d outside 1..5" %
                                            (path, position + 1, level))
        entries.append(entry)
    logger.debug("loaded %d security-level entries from %s" % (len(entries), path))
    return LevelMap(entries)


@dataclass(frozen=True)
class LevelRow:
    entry: SecurityLevelEntry
    result: ExperimentResult

    @property
    def level(self) -> int:
        return self.entry.nist_level

    @property
    def protocol(self) -> str:
        return self.entry.protocol

    @property
    def category(self) -> Category:
        return self.entry.category

    @property
    def color(self) -> str:
        return CATEGORY_COLORS[self.entry.category]

    @property
    def joules_per_1000(self) -> float:
        return self.result.joules_per_1000_net

    @property
    def seconds_per_1000(self) -> float:
        return self.result.seconds_per_1000


def _sort_key(row: LevelRow):
    return (row.entry.nist_level, CATEGORY_ORDER[row.entry.category], row.entry.position)


def level_table(results: Iterable[ExperimentResult], level_map: LevelMap) -> List[LevelRow]:
    """
    One row per security-level entry that has results, ordered by level, then
    category, then position in the level file.
    """
    grouped: Dict[str, List[ExperimentResult]] = {}
    entries: Dict[str, SecurityLevelEntry] = {}
    for result in results:
        entry = level_map.lookup(result.algorithm_label)
        grouped.setdefault(entry.algorithm_label, []).append(result)
        entries[entry.algorithm_label] = entry
    rows = [LevelRow(entries[key], pool_results(group, key) if len(group) > 1 else group[0])
            for key, group in grouped.items()]
    return sorted(rows, key=_sort_key)


def _log10(value: float) -> Optional[float]:
    return math.log10(value) if value > 0 else None


@dataclass(frozen=True)
class ChartRow:
    level: int
    protocol: str
    category: str
    color: str
    joules_per_1000: float
    log10_joules_per_1000: Optional[float]
    seconds_per_1000: float
    log10_seconds_per_1000: Optional[float]


def chart_data(rows: Sequence[LevelRow]) -> List[ChartRow]:
    return [ChartRow(row.level, row.protocol, row.category.value, row.color,
                     row.joules_per_1000, _log10(row.joules_per_1000),
                     row.seconds_per_1000, _log10(row.seconds_per_1000))
            for row in rows]


def render_chart(rows: Sequence[ChartRow], path: str, value: str = 'energy'):
    """
    Static bar chart, one bar per protocol in table order, logarithmic value
    axis, category colours, each value printed above its bar.
    """
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    from matplotlib.patches import Patch

    if value == 'energy':
        values = [row.joules_per_1000 for row in rows]
        ylabel, title, fmt = 'Joules / 1,000 key generations', 'Energy per 1,000 key generations', '{:.2f}'
    else:
        values = [row.seconds_per_1000 for row in rows]
        ylabel, title, fmt = 'Seconds / 1,000 key generations', 'Time to generate 1,000 keys', '{:.3f}'

    fig, ax = plt.subplots(figsize=(max(8, len(rows) * 0.7), 6))
    try:
        x = list(range(len(rows)))
        # a log axis cannot show zero
        heights = [v if v > 0 else float('nan') for v in values]
        bars = ax.bar(x, heights, color=[row.color for row in rows])
        ax.set_yscale('log')
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.set_xticks(x)
        ax.set_xticklabels(["L%d %s" % (row.level, row.protocol) for row in rows], rotation=60, ha='right')
        for bar, v in zip(bars, values):
            if v > 0:
                ax.annotate(fmt.format(v), xy=(bar.get_x() + bar.get_width() / 2, v),
                            xytext=(0, 3), textcoords='offset points', ha='center', va='bottom', fontsize=8)
        present = [c for c in (Category.POST_QUANTUM, Category.ELLIPTIC_CURVE, Category.CLASSIC)
                   if any(row.category == c.value for row in rows)]
        ax.legend(handles=[Patch(color=CATEGORY_COLORS[c], label=c.value) for c in present])
        fig.tight_layout()
        fig.savefig(path, format='svg')
    finally:
        plt.close(fig)


@dataclass(frozen=True)
class FleetScenario:
    keygens_per_year: float
    from_joules_per_key: float
    to_joules_per_key: float
    price_per_kwh: float
    currency: str = 'GBP'
    from_label: str = 'from'
    to_label: str = 'to'


@dataclass(frozen=True)
class FleetReport:
    scenario: FleetScenario
    annual_kwh_from: float
    annual_kwh_to: float
    annual_cost_from: float
    annual_cost_to: float
    multiplier: float

    def render(self) -> str:
        s = self.scenario
        lines = [
            "Fleet savings estimate",
            "  key generations per year: %.4g" % s.keygens_per_year,
            "  price: %.4f %s/kWh" % (s.price_per_kwh, s.currency),
            "  %s: %.6g J/key -> %.2f kWh/year, %.2f %s/year" %
            (s.from_label, s.from_joules_per_key, self.annual_kwh_from, self.annual_cost_from, s.currency),
            "  %s: %.6g J/key -> %.2f kWh/year, %.2f %s/year" %
            (s.to_label, s.to_joules_per_key, self.annual_kwh_to, self.annual_cost_to, s.currency),
            "  saving: %.2f kWh/year, %.2f %s/year" %
            (self.annual_kwh_from - self.annual_kwh_to, self.annual_cost_from - self.annual_cost_to, s.currency),
            "  %s uses %.1f times the energy of %s per key" % (s.from_label, self.multiplier, s.to_label),
        ]
        return '\n'.join(lines) + '\n'


def fleet_savings(scenario: FleetScenario) -> FleetReport:
    """kWh = keys x J / 3.6e6; cost = kWh x price; multiplier = from J / to J"""
    if scenario.to_joules_per_key <= 0:
        raise AnalysisError("fleet scenario needs a positive 'to' energy per key")
    for name in ('keygens_per_year', 'from_joules_per_key', 'price_per_kwh'):
        if getattr(scenario, name) <= 0:
            raise AnalysisError("fleet scenario %s must be positive" % name)
    kwh_from = scenario.keygens_per_year * scenario.from_joules_per_key / JOULES_PER_KWH
    kwh_to = scenario.keygens_per_year * scenario.to_joules_per_key / JOULES_PER_KWH
    return FleetReport(scenario, kwh_from, kwh_to,
                       kwh_from * scenario.price_per_kwh, kwh_to * scenario.price_per_kwh,
                       scenario.from_joules_per_key / scenario.to_joules_per_key)


def parse_key_values(text: str, source: str = 'scenario') -> Dict[str, str]:
    values = {}
    for line_number, line in enumerate(text.splitlines(), 1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition('=')
        if not sep or not key.strip():
            raise common.ConfigurationError("%s line %d: expected key = value" % (source, line_number))
        values[key.strip()] = value.strip()
    return values


FLEET_KEYS = ('keygens_per_year', 'from_joules_per_key', 'to_joules_per_key', 'from_algorithm',
              'to_algorithm', 'price_per_kwh', 'currency', 'from_label', 'to_label')


def load_fleet_scenario(path: str, per_key_joules: Optional[Dict[str, float]] = None) -> FleetScenario:
    """
    Read a key = value scenario file. from_algorithm / to_algorithm take the
    energy per key from per_key_joules (analysed results) instead of a number.
    """
    try:
        with open(path) as f:
            values = parse_key_values(f.read(), path)
    except OSError as err:
        raise common.ConfigurationError("cannot read fleet scenario %s: %s" % (path, err))
    unknown = set(values) - set(FLEET_KEYS)
    if unknown:
        raise common.ConfigurationError("fleet scenario %s: unknown keys %s" % (path, ', '.join(sorted(unknown))))

    def number(key):
        try:
            return float(values[key])
        except KeyError:
            raise common.ConfigurationError("fleet scenario %s needs '%s'" % (path, key))
        except ValueError:
            raise common.ConfigurationError("fleet scenario %s: %s '%s' is not a number" % (path, key, values[key]))

    def per_key(side):
        if side + '_joules_per_key' in values:
            return number(side + '_joules_per_key'), values.get(side + '_label', side)
        algorithm = values.get(side + '_algorithm')
        if not algorithm:
            raise common.ConfigurationError("fleet scenario %s needs %s_joules_per_key or %s_algorithm" %
                                            (path, side, side))
        if per_key_joules is None or algorithm not in per_key_joules:
            raise AnalysisError("fleet scenario %s: no analysed result for '%s'" % (path, algorithm))
        return per_key_joules[algorithm], values.get(side + '_label', algorithm)

    from_joules, from_label = per_key('from')
    to_joules, to_label = per_key('to')
    return FleetScenario(keygens_per_year=number('keygens_per_year'),
                         from_joules_per_key=from_joules,
                         to_joules_per_key=to_joules,
                         price_per_kwh=number('price_per_kwh'),
                         currency=values.get('currency', 'GBP'),
                         from_label=from_label,
                         to_label=to_label)


@dataclass
class SummaryRecord:
    """One parsed line of AllResults.csv."""
    timestamp: str
    algorithm_label: str
    iterations: int
    gross_joules: float
    wall_seconds: float
    status: str
    line_number: int = 0


def read_all_results(path: str) -> List[SummaryRecord]:
    try:
        f = open(path, newline='')
    except OSError as err:
        raise common.ConfigurationError("cannot read %s: %s" % (path, err))
    records = []
    with f:
        reader = csv.DictReader(f)
        missing = set(ALL_RESULTS_COLUMNS[:5]) - set(reader.fieldnames or ())
        if missing:
            raise common.ConfigurationError("%s lacks columns %s" % (path, ', '.join(sorted(missing))))
        for row in reader:
            line_number = reader.line_num
            try:
                records.append(SummaryRecord(timestamp=row['timestamp'],
                                             algorithm_label=row['algorithm'],
                                             iterations=int(row['iterations']),
                                             gross_joules=float(row['gross_joules']),
                                             wall_seconds=float(row['wall_seconds']),
                                             status=(row.get('status') or STATUS_OK).strip(),
                                             line_number=line_number))
            except (TypeError, ValueError) as err:
                raise common.ConfigurationError("%s line %d: %s" % (path, line_number, err))
    return records


@dataclass
class AnalysisReport:
    baseline: BaselineModel
    results: List[ExperimentResult]
    rows: List[LevelRow] = field(default_factory=list)
    excluded: List[SummaryRecord] = field(default_factory=list)

    @property
    def uncorrected(self) -> bool:
        return self.baseline.uncorrected

    def per_key_joules(self) -> Dict[str, float]:
        """Energy per key by algorithm descriptor, display name and alias."""
        energies = {r.algorithm_label: r.joules_per_1000_net / 1000 for r in self.results}
        for row in self.rows:
            for label in row.entry.labels():
                energies[label] = row.joules_per_1000 / 1000
        return energies

    def uncertainty_note(self) -> str:
        return ("Meter accuracy +/-%.2f%% voltage and +/-%.1f%% current bounds energy to +/-%.2f%% relative; "
                "each session also carries up to %.1f J of endpoint quantization (1 mWh counters)." %
                (VOLTAGE_ACCURACY * 100, CURRENT_ACCURACY * 100,
                 (VOLTAGE_ACCURACY + CURRENT_ACCURACY) * 100, SESSION_QUANTUM_JOULES))

    def summary_lines(self) -> List[str]:
        lines = []
        if self.uncorrected:
            lines.append("Baseline: none (no NULL runs) - rates are uncorrected")
        else:
            lines.append("Baseline: %.4f W from %d NULL runs over %.1f s" %
                         (self.baseline.background_watts, self.baseline.source_runs,
                          self.baseline.total_null_seconds))
        for record in self.excluded:
            reason = record.status if record.status != STATUS_OK else "zero duration"
            lines.append("Excluded: line %d %s %s (%s)" %
                         (record.line_number, record.timestamp, record.algorithm_label, reason))
        for row in self.rows:
            flag = " (clamped)" if row.result.clamped else ""
            lines.append("L%d %-16s %-13s %12.2f J/1000 %12.4f s/1000%s" %
                         (row.level, row.protocol, row.category.value, row.joules_per_1000,
                          row.seconds_per_1000, flag))
        lines.append(self.uncertainty_note())
        return lines


def aggregate(all_results_path: str, null_label: str = NULL_LABEL,
              level_map: Optional[LevelMap] = None) -> AnalysisReport:
    """
    Fit the baseline from the null_label rows, correct and pool every other
    row by algorithm, and arrange the results by security level. Rows whose
    status is not 'ok' take no part.
    """
    records = read_all_results(all_results_path)
    level_map = level_map if level_map is not None else load_levels()
    usable, excluded = [], []
    for record in records:
        if record.status != STATUS_OK:
            logger.warning("excluding %s %s: status '%s'" % (record.timestamp, record.algorithm_label, record.status))
            excluded.append(record)
        elif record.wall_seconds <= 0:
            logger.warning("excluding %s %s: duration %s s" % (record.timestamp, record.algorithm_label, record.wall_seconds))
            excluded.append(record)
        else:
            usable.append(record)

    nulls = [(r.gross_joules, r.wall_seconds) for r in usable if r.algorithm_label == null_label]
    if nulls:
        baseline = fit_baseline(nulls)
    else:
        logger.warning("no %s rows in %s; rates are uncorrected" % (null_label, all_results_path))
        baseline = BaselineModel.zero()

    by_algorithm: Dict[str, List[ExperimentResult]] = {}
    for record in usable:
        if record.algorithm_label == null_label:
            continue
        result = net_rate(record.gross_joules, record.wall_seconds, record.iterations, baseline,
                          record.algorithm_label)
        by_algorithm.setdefault(record.algorithm_label, []).append(result)
    results = [pool_results(group, label) if len(group) > 1 else group[0]
               for label, group in by_algorithm.items()]
    return AnalysisReport(baseline, results, level_table(results, level_map), excluded)


def write_level_table(rows: Sequence[LevelRow], path: str):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(('level', 'protocol', 'category', 'equiv_bits', 'joules_per_1000', 'seconds_per_1000'))
        for row in rows:
            writer.writerow((row.level, row.protocol, row.category.value, row.entry.equiv_bits_text,
                             "%.2f" % row.joules_per_1000, "%.4f" % row.seconds_per_1000))


def write_chart_data(chart: Sequence[ChartRow], path: str):
    def opt(value):
        return '' if value is None else "%.6f" % value

    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(('level', 'protocol', 'category', 'color', 'joules_per_1000', 'log10_joules_per_1000',
                         'seconds_per_1000', 'log10_seconds_per_1000'))
        for row in chart:
            writer.writerow((row.level, row.protocol, row.category, row.color,
                             "%.4f" % row.joules_per_1000, opt(row.log10_joules_per_1000),
                             "%.6f" % row.seconds_per_1000, opt(row.log10_seconds_per_1000)))


def write_outputs(report: AnalysisReport, out_dir: str, fleet: Optional[FleetReport] = None) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, 'level_table.csv')
    write_level_table(report.rows, path)
    written.append(path)
    chart = chart_data(report.rows)
    path = os.path.join(out_dir, 'chart_data.csv')
    write_chart_data(chart, path)
    written.append(path)
    if chart:
        for value in ('energy', 'time'):
            path = os.path.join(out_dir, 'chart_%s.svg' % value)
            render_chart(chart, path, value)
            written.append(path)
    else:
        logger.info("no workload results; charts skipped")
    if fleet is not None:
        path = os.path.join(out_dir, 'fleet_report.txt')
        with open(path, 'w') as f:
            f.write(fleet.render())
        written.append(path)
    return written
