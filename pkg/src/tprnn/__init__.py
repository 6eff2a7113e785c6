"""Short-term household load forecasting with time-pooled deep recurrent networks.

The package is organised by pipeline stage:

* :mod:`tprnn.timeseries_data` - UCI household power parsing, imputation, scaling
* :mod:`tprnn.pooling` - half-day segmentation, slot pools, windows and batches
* :mod:`tprnn.neural_core` - LSTM / vanilla stacked networks with hand-written BPTT
* :mod:`tprnn.forecasters` - ARIMA, SVR, RNN, DRNN and TPRNN behind one contract
* :mod:`tprnn.evaluation` - RMSE / MAE, comparison reports, trace export
* :mod:`tprnn.cli` - the ``tprnn`` command line entry point
"""

__version__ = "0.1.0"
