from .tool_server import IvToolServer
