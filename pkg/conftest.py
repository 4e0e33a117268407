# Repository root on sys.path so tests import the pipeline as ``src.<module>``.
