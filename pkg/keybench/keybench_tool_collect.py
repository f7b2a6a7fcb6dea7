"""
Run the measurement node.

Listens for control datagrams from the device under test and records the
meter between START and STOP, one data file per experiment plus a line in
AllResults.csv.
"""

import logging
import os

from keybench import common, meter
from keybench.collector import Collector, select_port
from keybench.keybench_base import KeybenchBase

logger = logging.getLogger('keybench.collect')

# what the sim backend draws without a --sim-profile: a steady idle load
DEFAULT_SIM_WATTS = 3.0


class KeybenchTool(KeybenchBase):
    def get_details(self):
        return dict(name=self.name_from_file(__file__),
                    description="Collect meter readings for experiments signalled over UDP.")

    def register(self, parser):
        parser.description = "listen for GETREADY/START/STOP and log the power meter for each experiment."
        register_meter_arguments(parser)
        parser.add_argument('--port', type=int, default=None,
                            help='UDP port to listen on (defaults to $KEYBENCH_PORT or %d)' %
                                 common.DEFAULT_CONTROL_PORT)
        parser.add_argument('--bind', default='0.0.0.0', help='address to listen on')
        parser.add_argument('--out', dest='out_dir', default=None,
                            help='directory for data files and AllResults.csv (defaults to $KEYBENCH_OUT_DIR or .)')
        parser.add_argument('--idle-timeout', dest='idle_timeout', type=float, default=None,
                            help='seconds of unchanged readings before an experiment without STOP is truncated')
        parser.add_argument('--once', action='store_true', default=False,
                            help='exit after the first finished experiment')

    def run(self, args):
        port = args.port if args.port is not None else self.port_from_environment()
        out_dir = args.out_dir or os.environ.get('KEYBENCH_OUT_DIR') or os.curdir
        factory = backend_factory(args)
        if args.dry_run:
            print("Would listen on %s:%d, writing to %s" % (args.bind, port, os.path.abspath(out_dir)))
            return []
        kwds = {}
        if args.idle_timeout is not None:
            if args.idle_timeout <= 0:
                raise common.ConfigurationError("idle timeout must be > 0, not %s" % args.idle_timeout)
            kwds['idle_timeout'] = args.idle_timeout
        collector = Collector(factory, out_dir, bind=(args.bind, port), **kwds)
        rows = collector.serve(once=args.once)
        logger.info("%d experiments recorded" % len(rows))
        return rows


def register_meter_arguments(parser):
    parser.add_argument('--backend', choices=meter.BACKENDS, default='tc66',
                        help='tc66 for the real meter, sim for the built-in simulator')
    parser.add_argument('--com', default=None,
                        help='serial port of the meter, skipping the selection prompt (or $KEYBENCH_COM)')
    parser.add_argument('--sim-profile', dest='sim_profile', default=None,
                        help='simulator power profile (LLSD); defaults to a steady %g W' % DEFAULT_SIM_WATTS)


def backend_factory(args, clock=None):
    """A zero-argument callable making a fresh backend per experiment."""
    if args.backend == 'sim':
        profile = meter.load_sim_profile(args.sim_profile) if args.sim_profile \
            else meter.SimProfile.constant(DEFAULT_SIM_WATTS)
        print("Selected COM port: SIM (simulated TC66C)")
        return lambda: meter.make_backend('sim', profile=profile, clock=clock)
    com = select_port(meter.list_serial_ports(), args.com or os.environ.get('KEYBENCH_COM'))
    return lambda: meter.make_backend('tc66', com=com, clock=clock)
