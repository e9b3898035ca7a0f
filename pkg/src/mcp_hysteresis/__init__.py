"""mcp-hysteresis: vector hysteresis field solver for magnetostatic T-joints, with an MCP server."""

__version__ = "0.1.0"
