"""
glvortex_lab test suite
"""
