"""Interpreter, distributed runtime and compilers for the CREOLE language."""
