"""
Defines a system executable object which can be linked to cascade parameters.
"""

import logging
import os
import subprocess

from keybench import common

logger = logging.getLogger(__name__)

ALGORITHM_PLACEHOLDER = '{algorithm}'
PARAMS_PLACEHOLDER = '{params}'


class ExecutableError(common.ConfigurationError):
    pass


class Executable(common.Serialized):
    """
    An executable object which invokes a provided command as subprocess.

    Attributes:
        command - The command to invoke.
        arguments - The arguments to pass to the command being invoked.
        options - The options to pass to the command being invoked.
        parent - An Executable instance from which to inherit values from.

    Instances of this object may be chained by using the parent attribute.  If either the command or
    arguments attribute of this object is set to None, the value of the parents attribute will be
    used.  Options are merged with parent options coming before this objects options in the full
    options list.

    Any argument may contain '{algorithm}', replaced by the algorithm name at call
    time; an argument that is exactly '{params}' is replaced by zero or more
    parameter tokens. E.g.:

        keygen = Executable(command='openssl',
                            options=['genpkey', '-algorithm', '{algorithm}', '{params}'])
        keygen(substitutions=dict(algorithm='EC', params=['-pkeyopt', 'ec_paramgen_curve:P-521']))
    """

    parent = None

    def __init__(self, command=None, options=None, arguments=None, parent=None):
        self.command = command
        self.options = list(options or [])
        self.arguments = arguments
        self.parent = parent

    def __call__(self, options=[], environment=os.environ, substitutions=None):
        """Run with all output discarded; returns the exit status."""
        commandlist = self.command_list(options, environment, substitutions)
        self.show_command(commandlist)
        return subprocess.call(commandlist, env=environment,
                               stdin=subprocess.DEVNULL,
                               stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)

    def output(self, options=[], environment=os.environ, substitutions=None):
        """Run and return (exit status, stdout text)."""
        commandlist = self.command_list(options, environment, substitutions)
        self.show_command(commandlist)
        process = subprocess.run(commandlist, env=environment, stdin=subprocess.DEVNULL,
                                 stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                                 universal_newlines=True)
        return process.returncode, process.stdout

    def command_list(self, options=[], environment=os.environ, substitutions=None):
        commandlist = self._get_all_arguments(options)
        if substitutions:
            commandlist = expand_placeholders(commandlist, substitutions)
        prog = self.resolve(environment)
        if prog:
            commandlist[0] = prog
        return commandlist

    def resolve(self, environment=os.environ):
        """
        Full path of the command as found on environment's PATH, the command
        itself if it is already a path that exists, else None.
        """
        prog = self.get_command()
        if prog is None:
            raise ExecutableError('no command specified')
        if os.path.dirname(prog):
            return prog if os.path.isfile(prog) else None
        # Looking for PATH is a bit tricky: the capitalization of the name
        # might vary by platform.
        pathkey = [k for k in environment.keys() if k.upper() == "PATH"]
        if not pathkey:
            return None
        return common.find_executable(prog, path=environment[pathkey[0]].split(os.pathsep))

    def show_command(self, commandlist):
        logger.debug("running '%s'" % "' '".join(commandlist))

    def __str__(self, options=[]):
        try:
            return ' '.join(self._get_all_arguments(options))
        except ExecutableError:
            return 'INVALID EXECUTABLE!'

    def get_arguments(self):
        """
        Returns the arguments which will be passed to the command on execution.
        """
        if self.arguments is not None:
            return list(self.arguments)
        elif self.parent is not None:
            return self.parent.get_arguments()
        else:
            return []

    def get_options(self):
        """
        Returns all options which will be passed to the command on execution.
        """
        if self.parent is not None:
            all_options = self.parent.get_options()
        else:
            all_options = []
        all_options.extend(self.options)
        return all_options

    def get_command(self):
        """
        Returns the command this object will envoke on execution.
        """
        if self.command is not None:
            return self.command
        elif self.parent is not None:
            return self.parent.get_command()
        else:
            return None

    def _get_all_arguments(self, options):
        actual_command = self.get_command()
        if actual_command is None:
            raise ExecutableError('no command specified')
        all_arguments = [actual_command]
        all_arguments.extend(self.get_options())
        all_arguments.extend(options)
        all_arguments.extend(self.get_arguments())
        return all_arguments


def expand_placeholders(commandlist, substitutions):
    params = list(substitutions.get('params', []))
    algorithm = substitutions.get('algorithm', '')
    expanded = []
    for arg in commandlist:
        if arg == PARAMS_PLACEHOLDER:
            expanded.extend(params)
        else:
            expanded.append(arg.replace(ALGORITHM_PLACEHOLDER, algorithm))
    return expanded


def executable_from_dict(name, description):
    """
    Build an Executable from a configuration entry: a dict with 'command'
    and optional 'options' and 'arguments'.
    """
    if not isinstance(description, dict) or not description.get('command'):
        raise ExecutableError("'%s' needs a 'command'" % name)
    for key in ('options', 'arguments'):
        value = description.get(key)
        if value is not None and not (isinstance(value, list) and all(isinstance(v, str) for v in value)):
            raise ExecutableError("'%s' %s must be a list of strings" % (name, key))
    return Executable(command=description['command'],
                      options=description.get('options'),
                      arguments=description.get('arguments'))
