"""
Turn AllResults.csv into baseline-corrected rates, a security-level table,
two charts and, given a scenario file, a fleet savings estimate.
"""

import logging
import os

from keybench import analysis
from keybench.keybench_base import KeybenchBase

logger = logging.getLogger('keybench.analyze')


class KeybenchTool(KeybenchBase):
    def get_details(self):
        return dict(name=self.name_from_file(__file__),
                    description="Analyse AllResults.csv.")

    def register(self, parser):
        parser.add_argument('--all-results', dest='all_results', default=None,
                            help='summary file written by the collector (defaults to %s in $KEYBENCH_OUT_DIR or .)' %
                                 analysis.ALL_RESULTS_FILE)
        parser.add_argument('--levels', default=None,
                            help='security-level table (defaults to the one shipped with keybench)')
        parser.add_argument('--out', dest='out_dir', default=os.curdir, help='directory for the outputs')
        parser.add_argument('--fleet', default=None, help='fleet scenario file (key = value lines)')
        parser.add_argument('--null-label', dest='null_label', default=analysis.NULL_LABEL,
                            help='algorithm label of the baseline runs')

    def run(self, args):
        all_results = args.all_results or os.path.join(os.environ.get('KEYBENCH_OUT_DIR') or os.curdir,
                                                       analysis.ALL_RESULTS_FILE)
        level_map = analysis.load_levels(args.levels)
        report = analysis.aggregate(all_results, args.null_label, level_map)
        for line in report.summary_lines():
            print(line)

        fleet = None
        if args.fleet:
            fleet = analysis.fleet_savings(analysis.load_fleet_scenario(args.fleet, report.per_key_joules()))
            print(fleet.render(), end='')

        if args.dry_run:
            logger.info("dry run: nothing written to %s" % args.out_dir)
            return report
        for path in analysis.write_outputs(report, args.out_dir, fleet):
            print("Wrote %s" % path)
        return report
