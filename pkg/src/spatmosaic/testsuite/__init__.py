# -*- coding: utf-8 -*-

from __future__ import annotations

import logging
import os
import shutil
import tempfile
import unittest
from contextlib import contextmanager
from logging.handlers import BufferingHandler

import numpy as np

from spatmosaic.util import logger


class TestHandler(BufferingHandler):

    def __init__(self, only_warnings=False):
        # capacity 0: shouldFlush is overridden, the buffer is cleared by hand
        self.only_warnings = only_warnings
        BufferingHandler.__init__(self, 0)

    def shouldFlush(self):
        return False

    def emit(self, record):
        if self.only_warnings and record.levelno != logging.WARNING:
            return
        self.buffer.append(record.__dict__)


class BaseTestCase(unittest.TestCase):

    CHECK_NO_WARNING = True

    @contextmanager
    def capture_log(self, level=logging.DEBUG):
        th = TestHandler()
        th.setLevel(level)
        logger.addHandler(th)
        old_level = logger.level
        logger.setLevel(min(level, logger.getEffectiveLevel()))
        if self._test_handler is not None:
            n = len(self._test_handler.buffer)
        try:
            yield th.buffer
        finally:
            logger.setLevel(old_level)
            logger.removeHandler(th)
            if self._test_handler is not None:
                self._test_handler.buffer = self._test_handler.buffer[:n]

    def setUp(self):
        self._test_handler = None
        if self.CHECK_NO_WARNING:
            self._test_handler = th = TestHandler()
            th.setLevel(logging.WARNING)
            logger.addHandler(th)

    def tearDown(self):
        if self._test_handler is not None:
            logger.removeHandler(self._test_handler)
            buf = self._test_handler.buffer
            n = len(buf)
            msg = '\n'.join(logging.makeLogRecord(record).getMessage() for record in buf)
            self.assertEqual(n, 0, msg='%d warnings raised.\n%s' % (n, msg))

    def assertArrayAlmostEqual(self, first, second, rtol=1e-07, atol=0, msg=''):
        np.testing.assert_allclose(np.asarray(first, dtype=float),
                                   np.asarray(second, dtype=float),
                                   rtol=rtol, atol=atol, err_msg=msg)


class TempDirTestCase(BaseTestCase):
    """Gives every test a fresh scratch directory in ``self.tmp``."""

    def setUp(self):
        super(TempDirTestCase, self).setUp()
        self.tmp = tempfile.mkdtemp(prefix='spatmosaic-')

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)
        super(TempDirTestCase, self).tearDown()

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)


def testsuite():
    """A testsuite that has all the spatmosaic tests.
    """
    return unittest.TestLoader().discover(os.path.dirname(__file__))


def main():
    """Runs the testsuite as command line application.
    """
    try:
        unittest.main()
    except Exception as e:
        print('Error: %s' % e)


def run():
    """Run all tests.

    :return: a :class:`unittest.TestResult` object
    """
    test_runner = unittest.TextTestRunner()
    return test_runner.run(testsuite())
