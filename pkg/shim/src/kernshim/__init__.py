"""Runner-protocol shim: executes Torch reference operators and builds/runs
candidate kernels (native C++ on CPU, Triton on GPU), speaking the harness's
file-and-exit-code contract.

The shim owns every framework-specific concern (tensor library, JIT, device
sync) so the orchestration side stays framework-free.
"""

__version__ = "0.1.0"
