import getpass
import platform
import socket

import numpy as np
import psutil

from version import __version__


class RunRegistration:

    @staticmethod
    def get_run_identity(capabilities: list[str] = None) -> dict:
        return {
            'hostname': socket.gethostname(),
            'username': getpass.getuser(),
            'version': __version__,
            'python': platform.python_version(),
            'numpy': np.__version__,
            'physical_cores': psutil.cpu_count(logical=False) or 1,
            'capabilities': capabilities or ['bench', 'distill']
        }
