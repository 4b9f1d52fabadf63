#!/usr/bin/env python3
"""
Run the reconstruction MCP server over stdio (e.g. for MCP Inspector)
"""
import os
import sys

from dotenv import load_dotenv

# Load environment overrides from normrecon.env
load_dotenv("normrecon.env")

# Add the current directory to Python path so imports work
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from normrecon.recon_mcp import main  # noqa: E402

if __name__ == "__main__":
    main()
