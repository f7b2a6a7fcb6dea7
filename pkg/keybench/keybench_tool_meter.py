"""
Poll the meter a few times and print what it reports, to check the serial
link and the decoder without a device under test.
"""

import logging

from keybench import common
from keybench.clock import SystemClock
from keybench.keybench_base import KeybenchBase
from keybench.keybench_tool_collect import backend_factory, register_meter_arguments
from keybench.meter import MeterSampleError
from keybench.protocol import MAX_POLL_HZ, as_poll_hz

logger = logging.getLogger('keybench.meter_check')

HEADER = ('t', 'voltage_v', 'current_a', 'power_w', 'energy_mwh')


def format_reading(reading, origin, tsv=False):
    values = ("%.3f" % (reading.t - origin), "%.4f" % reading.voltage, "%.5f" % reading.current,
              "%.4f" % reading.power, "%d" % reading.energy_mwh)
    if tsv:
        return '\t'.join(values)
    return "%8ss  %sV  %sA  %sW  %smWh" % values


class KeybenchTool(KeybenchBase):
    def get_details(self):
        return dict(name=self.name_from_file(__file__),
                    description="Print a few meter readings.")

    def register(self, parser):
        register_meter_arguments(parser)
        parser.add_argument('--count', type=int, default=10, help='readings to take')
        parser.add_argument('--hz', default='2', help='readings per second (at most 10)')
        parser.add_argument('--tsv', action='store_true', default=False, help='tab-separated output')

    def run(self, args, clock=None):
        if args.count < 1:
            raise common.ConfigurationError("--count must be >= 1")
        try:
            hz = as_poll_hz(args.hz)
        except (ValueError, ZeroDivisionError):
            raise common.ConfigurationError("--hz '%s' is not a number" % args.hz)
        if not 0 < hz <= MAX_POLL_HZ:
            raise common.ConfigurationError("--hz must be in (0, %s]" % MAX_POLL_HZ)
        clock = clock or SystemClock()
        backend = backend_factory(args, clock)()
        if args.tsv:
            print('\t'.join(HEADER))
        taken = 0
        with backend:
            origin = clock.now()
            deadline = origin
            for _ in range(args.count):
                clock.wait_until(deadline)
                try:
                    reading = backend.poll()
                except MeterSampleError as err:
                    logger.warning("sample failed: %s" % err)
                else:
                    print(format_reading(reading, origin, args.tsv))
                    taken += 1
                deadline += 1 / float(hz)
        return taken
