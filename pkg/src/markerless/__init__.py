"""Multi-view markerless body fitting on dense 2D landmarks.

The package is organised by stage of the pipeline: ``body_model`` (LBS
body, landmark sampling, surface markers), ``camera`` (pinhole rigs,
triangulation), ``render`` (z-buffer depth and silhouettes), ``observe``
(synthetic landmark observations), ``fit`` (robust three-stage L-BFGS
fitting), ``metrics`` and the ``cli``.
"""

__version__ = "0.1.0"
