#!/usr/bin/env python3
"""
glvortex - numerical lab for Ginzburg-Landau vortices.

This is the main CLI entry point, providing the fields, obstacle, minimize,
identities and gamma studies. For use as a module, import from glvortex_lab
directly.

This file delegates to the cli.py module for actual implementation.
"""

from glvortex_lab.cli import main

if __name__ == "__main__":
    main()
