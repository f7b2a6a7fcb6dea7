"""
Run one measured experiment on the device under test.

The collector named by --collector (or $KEYBENCH_COLLECTOR, or the
configuration file) is told to get ready, the platform is pinned, and the
key generator runs --iterations times between START and STOP.
"""

import logging

from keybench import common, configfile
from keybench.keybench_base import KeybenchBase
from keybench.protocol import as_poll_hz, parse_address
from keybench.runner import ExperimentSpec, PlatformHooks, run_experiment

logger = logging.getLogger('keybench.experiment')


class DutSettings(object):
    """Command line, environment and configuration file merged, in that order of preference."""

    def __init__(self, args, tool: KeybenchBase):
        self.config = configfile.ExperimentConfiguration(configfile.config_path(args.config_file))
        collector = args.collector or tool.collector_from_environment() or self.config.collector
        self.collector_addr = parse_address(collector, tool.port_from_environment()) if collector else None
        self.settle_seconds = args.settle if args.settle is not None else float(self.config.settle_seconds)
        poll_hz = getattr(args, 'poll_hz', None) or self.config.poll_hz
        try:
            self.poll_hz = as_poll_hz(str(poll_hz))
        except (ValueError, ZeroDivisionError):
            raise common.ConfigurationError("poll rate '%s' is not a number" % poll_hz)
        self.keygen = self.config.get_keygen()
        self.hooks = PlatformHooks.from_config(self.config)
        self.dry_run = bool(getattr(args, 'dry_run', False))

    def check_collector(self):
        if self.collector_addr is None and not self.dry_run:
            raise common.ConfigurationError(
                "no collector address: pass --collector host:port or set KEYBENCH_COLLECTOR")

    def run_kwds(self):
        return dict(hooks=self.hooks, collector_addr=self.collector_addr, keygen=self.keygen,
                    dry_run=self.dry_run)


def register_dut_arguments(parser):
    parser.add_argument('--collector', default=None,
                        help='collector host:port (defaults to $KEYBENCH_COLLECTOR or the configuration file)')
    parser.add_argument('--settle', type=float, default=None, metavar='SECONDS',
                        help='pause between pinning the platform and START')
    parser.add_argument('--config-file',
                        dest='config_file',
                        default=None,
                        help='(defaults to $KEYBENCH_CONFIG_FILE or "%s")' % configfile.KEYBENCH_CONFIG_FILE)


class KeybenchTool(KeybenchBase):
    def get_details(self):
        return dict(name=self.name_from_file(__file__),
                    description="Run one measured key-generation experiment.")

    def register(self, parser):
        parser.description = "pin the platform, signal the collector and run one algorithm a fixed number of times."
        parser.add_argument('--algorithm', required=True,
                            help="algorithm descriptor, e.g. 'ML-KEM-768' or 'RSA -pkeyopt rsa_keygen_bits:2048', "
                                 "or NULL for a baseline run")
        parser.add_argument('--iterations', type=int, required=True, help='key generations to run')
        parser.add_argument('--poll-hz', dest='poll_hz', default=None,
                            help='meter sampling rate asked of the collector (at most 10)')
        parser.add_argument('--id', dest='experiment_id', default=None,
                            help='experiment id (defaults to $KEYBENCH_EXPERIMENT_ID or the local time)')
        register_dut_arguments(parser)

    def run(self, args):
        settings = DutSettings(args, self)
        settings.check_collector()
        spec = ExperimentSpec(args.algorithm, args.iterations, settings.settle_seconds, settings.poll_hz)
        report = run_experiment(spec, experiment_id=args.experiment_id, **settings.run_kwds())
        logger.info("experiment %s: %d of %d iterations" %
                    (report.experiment_id, report.iterations_completed, report.iterations))
        return report
