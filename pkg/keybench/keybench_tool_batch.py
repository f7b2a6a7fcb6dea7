import logging

from keybench import common
from keybench.keybench_base import KeybenchBase
from keybench.keybench_tool_experiment import DutSettings, register_dut_arguments
from keybench.runner import run_batch

logger = logging.getLogger('keybench.batch')

_HELP = """\
Run every experiment in a batch file, in order.

Each line of the file is '<algorithm>,<iterations>'; blank lines and lines
starting with '#' are skipped. --iterations replaces every line's count,
which is handy for a short rehearsal of a long batch.
"""


class KeybenchTool(KeybenchBase):
    def get_details(self):
        return dict(name=self.name_from_file(__file__),
                    description="Run a batch file of experiments.")

    def register(self, parser):
        parser.description = _HELP
        parser.add_argument('--iterations', type=int, default=None,
                            help="use this iteration count for every line")
        register_dut_arguments(parser)
        parser.add_argument('batch_file', metavar='FILE', help="batch file of '<algorithm>,<iterations>' lines")

    def run(self, args):
        settings = DutSettings(args, self)
        settings.check_collector()
        try:
            reports = run_batch(args.batch_file, args.iterations,
                                settle_seconds=settings.settle_seconds, poll_hz=settings.poll_hz,
                                **settings.run_kwds())
        except common.KeybenchError as err:
            done = getattr(err, 'reports', [])
            if done:
                logger.error("batch stopped after %d completed experiments" % len(done))
            raise
        print("Batch complete: %d experiments" % len(reports))
        return reports
