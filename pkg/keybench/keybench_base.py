"""
Base class that plugs a keybench tool module into the keybench dispatcher
and also lets it run standalone.
"""

import argparse
import os

from keybench import common


class KeybenchBase:

    def name_from_file(self, filename):
        """
        A tool module's file name embeds the tool's invocation name
        (keybench_tool_<name>.py); extract it from __file__.
        """
        basename = os.path.splitext(os.path.basename(filename))[0]
        pfx = "keybench_tool_"
        if basename.startswith(pfx):
            basename = basename[len(pfx):]
        return basename

    def collector_from_environment(self):
        return os.environ.get('KEYBENCH_COLLECTOR') or None

    def port_from_environment(self):
        return common.env_value('KEYBENCH_PORT', common.DEFAULT_CONTROL_PORT, int)

# Override these three functions to hook into keybench_main

    def get_details(self):
        # name is the sub-command name; description is its help line
        return dict(name='', description='')

    def register(self, parser):
        pass

    def run(self, args):
        pass

# Standalone functionality:

    # not __init__ as we have to overload functions it calls
    def __init__(self):
        details = self.get_details()
        self.parser = argparse.ArgumentParser(description=details['description'])
        self.register(self.parser)
        self.parser.add_argument('-n', '--dry-run', action='store_true', help='Dry run only')

    def main(self, args_in):
        if len(args_in) < 1:
            self.parser.print_usage()
        else:
            args = self.parser.parse_args(args_in)
            self.run(args)
