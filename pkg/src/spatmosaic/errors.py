# -*- coding: utf-8 -*-
"""
    spatmosaic.errors
    ~~~~~~~~~~~~~~~~~

    Exceptions raised while loading, partitioning, fitting and smoothing
    spatial datasets.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations


class SpatMosaicError(Exception):
    """Base class for all errors raised by spatmosaic.
    """


class SchemaError(SpatMosaicError, KeyError):
    """Raised when a column named by the schema is not in the input file.
    """

    def __init__(self, column, role=None, filename=None):
        super(SchemaError, self).__init__(column)
        self.column = column
        self.role = role
        self.filename = filename

    def __str__(self):
        mess = "column '{}'".format(self.column)
        if self.role:
            mess += ' (for {})'.format(self.role)
        mess += ' is not present'
        if self.filename:
            mess += ' in {}'.format(self.filename)
        return mess


class ValidationError(SpatMosaicError, ValueError):
    """Raised when an observation fails validation.

    :param msg: what is wrong with the value.
    :param row: 1-based data row in the input (header excluded), if known.
    """

    def __init__(self, msg, row=None, filename=None):
        super(ValidationError, self).__init__(msg)
        self.msg = msg
        self.row = row
        self.filename = filename

    def __str__(self):
        if self.row is None:
            return self.msg
        where = 'row {}'.format(self.row)
        if self.filename:
            where = '{}, {}'.format(self.filename, where)
        return '{}: {}'.format(where, self.msg)


class ArgumentError(SpatMosaicError, ValueError):
    """Raised when an argument is outside its admissible range.
    """

    def __init__(self, name, value, expected):
        super(ArgumentError, self).__init__(name)
        self.name = name
        self.value = value
        self.expected = expected

    def __str__(self):
        return "invalid {} = {!r}: expected {}".format(
            self.name, self.value, self.expected)


class ConditioningError(SpatMosaicError, ArithmeticError):
    """Raised when a design matrix is numerically rank deficient.
    """

    def __init__(self, rank, columns, extra_msg=''):
        super(ConditioningError, self).__init__(rank)
        self.rank = rank
        self.columns = columns
        self.extra_msg = extra_msg

    def __str__(self):
        msg = 'design matrix has rank {} but {} columns'.format(
            self.rank, self.columns)
        return msg + self.extra_msg


class DegenerateGeometryError(SpatMosaicError, ValueError):
    """Raised when point locations cannot support the requested geometry.
    """

    def __init__(self, msg, n_points=None):
        super(DegenerateGeometryError, self).__init__(msg)
        self.msg = msg
        self.n_points = n_points

    def __str__(self):
        if self.n_points is None:
            return self.msg
        return '{} ({} points)'.format(self.msg, self.n_points)


class InfeasiblePartitionError(SpatMosaicError, ValueError):
    """Raised when the adjacency graph cannot be merged down to K clusters.
    """

    def __init__(self, components, K):
        super(InfeasiblePartitionError, self).__init__(components)
        self.components = components
        self.K = K

    def __str__(self):
        return ('adjacency graph has {} connected components; cannot form '
                '{} contiguous partitions'.format(self.components, self.K))


class ConfigurationError(SpatMosaicError, ValueError):
    """Raised for invalid simulator or run configuration.
    """

    def __init__(self, msg, key=None, filename=None, lineno=None):
        super(ConfigurationError, self).__init__(msg)
        self.msg = msg
        self.key = key
        self.filename = filename
        self.lineno = lineno

    def __str__(self):
        msg = self.msg
        if self.key is not None:
            msg = '{}: {}'.format(self.key, msg)
        if self.filename and self.lineno is not None:
            mess = 'While opening {}, in line {}: '
            return mess.format(self.filename, self.lineno) + msg
        if self.filename:
            return 'While opening {}: {}'.format(self.filename, msg)
        return msg


class SimulationOverflowError(SpatMosaicError, OverflowError):
    """Raised when a simulated Poisson mean would overflow.
    """

    def __init__(self, max_eta, limit):
        super(SimulationOverflowError, self).__init__(max_eta)
        self.max_eta = max_eta
        self.limit = limit

    def __str__(self):
        return ('linear predictor reaches {:.3g} (> {}); rescale the '
                'covariates, beta or the field noise'.format(
                    self.max_eta, self.limit))


class NumericalError(SpatMosaicError, ArithmeticError):
    """Raised when an iterative fit produces non-finite values.
    """

    def __init__(self, msg, iteration=None):
        super(NumericalError, self).__init__(msg)
        self.msg = msg
        self.iteration = iteration

    def __str__(self):
        if self.iteration is None:
            return self.msg
        return '{} at iteration {}'.format(self.msg, self.iteration)


class StageError(SpatMosaicError, RuntimeError):
    """Raised when a pipeline stage fails; wraps the original exception.
    """

    def __init__(self, stage, cause):
        super(StageError, self).__init__(stage)
        self.stage = stage
        self.cause = cause

    def __str__(self):
        return "stage '{}' failed: {}: {}".format(
            self.stage, type(self.cause).__name__, self.cause)

    def to_record(self):
        """Machine-readable form written into the run report."""
        return {'stage': self.stage,
                'type': type(self.cause).__name__,
                'message': str(self.cause)}
