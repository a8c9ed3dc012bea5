"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""

from errors import InvalidDimensionError, DimensionMismatchError
from sphere import unit_vector
import numpy as np


class NetworkParams:
    """
    Parent class for (filter, output weights) pairs of the model
    f(Z, w, a) = a' relu(Z' w).

    Subclasses validate their own invariants on construction and expose
    their state as a dict for JSON output.
    """

    def __init__(self, w, a):
        self.w = unit_vector(w)
        self.a = np.asarray(a, dtype=float).copy()
        if self.a.ndim != 1:
            raise InvalidDimensionError(
                "Output weights must be a vector, got shape " +
                str(self.a.shape) + ".")

    @property
    def p(self):
        return self.w.shape[0]

    @property
    def k(self):
        return self.a.shape[0]

    def get_params_dict(self):
        return {
            'w': self.w.tolist(),
            'a': self.a.tolist()}


class TeacherParams(NetworkParams):
    """
    Ground-truth network (w*, a*) with ||w*|| = 1; the target of recovery.
    """

    def __init__(self, w_star, a_star):
        super().__init__(w_star, a_star)
        if self.p < 2 or self.k < 2:
            raise InvalidDimensionError(
                "Teacher needs p >= 2 and k >= 2, got p=" + str(self.p) +
                ", k=" + str(self.k) + ".")

    @property
    def w_star(self):
        return self.w

    @property
    def a_star(self):
        return self.a

    def as_student(self):
        """
        Return the teacher's parameters as a student (the global optimum).
        """

        return StudentParams(self.w.copy(), self.a.copy())

    def get_params_dict(self):
        return {
            'w_star': self.w.tolist(),
            'a_star': self.a.tolist()}


class StudentParams(NetworkParams):
    """
    Current iterate (w, a) with w on the unit sphere.
    """

    def __init__(self, w, a):
        super().__init__(w, a)

    def check_matches(self, teacher: TeacherParams):
        """
        Raise DimensionMismatchError unless (p, k) agree with the teacher.
        """

        if self.p != teacher.p or self.k != teacher.k:
            raise DimensionMismatchError(
                "Student (p=" + str(self.p) + ", k=" + str(self.k) +
                ") does not match teacher (p=" + str(teacher.p) + ", k=" +
                str(teacher.k) + ").")

    def copy(self):
        return StudentParams(self.w.copy(), self.a.copy())


class OverparamStudent(NetworkParams):
    """
    Two-filter student h(Z, w, v, a, b) = a' relu(Z' w) + b' relu(Z' v).
    """

    def __init__(self, w, v, a, b):
        super().__init__(w, a)
        self.v = unit_vector(v)
        self.b = np.asarray(b, dtype=float).copy()
        if self.v.shape != self.w.shape or self.b.shape != self.a.shape:
            raise DimensionMismatchError(
                "Second filter/weights must match the first: w " +
                str(self.w.shape) + ", v " + str(self.v.shape) + ", a " +
                str(self.a.shape) + ", b " + str(self.b.shape) + ".")

    def check_matches(self, teacher: TeacherParams):
        if self.p != teacher.p or self.k != teacher.k:
            raise DimensionMismatchError(
                "Overparameterized student (p=" + str(self.p) + ", k=" +
                str(self.k) + ") does not match teacher (p=" +
                str(teacher.p) + ", k=" + str(teacher.k) + ").")

    def copy(self):
        return OverparamStudent(self.w.copy(), self.v.copy(), self.a.copy(),
                                self.b.copy())

    def get_params_dict(self):
        return {
            'w': self.w.tolist(),
            'v': self.v.tolist(),
            'a': self.a.tolist(),
            'b': self.b.tolist()}
