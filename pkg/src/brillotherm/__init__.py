"""Cavity optomechanics toolkit for a bulk-acoustic resonator in a Fabry-Perot cavity.

Modules: ``model`` (input-output quantities), ``spectra`` (synthetic traces),
``fitting`` (least squares), ``thermometry`` (sideband asymmetry), ``thermal``
(crystal temperature circuit), ``cavity`` (transfer matrices), ``alignment``
(tilt laws), ``noise`` (frequency-noise metrology), ``io`` and ``cli``.
"""
__version__ = "0.1.0"
