"""
Tests du langage d'expressions : parse, impression, évaluation et duaux
"""

import math

import numpy as np
import pytest

import expr
from errors import ArityError, ExprSyntaxError, NonFinite, NotDifferentiable, UnknownIdentifier
from expr import Binary, Constant, Unary, Variable


class TestParse:
    def test_identity_components(self):
        assert expr.parse("x1; x2", 2) == (Variable(0), Variable(1))

    def test_complex_square(self):
        nodes = expr.parse("x1^2 - x2^2; 2*x1*x2", 2)
        assert nodes[0] == Binary("-", Binary("^", Variable(0), Constant(2.0)), Binary("^", Variable(1), Constant(2.0)))
        assert nodes[1] == Binary("*", Binary("*", Constant(2.0), Variable(0)), Variable(1))

    def test_trailing_operator_reports_offset(self):
        with pytest.raises(ExprSyntaxError) as info:
            expr.parse("x1 +", 1)
        assert info.value.offset == 4
        assert "offset 4" in str(info.value)

    def test_empty_source(self):
        with pytest.raises(ExprSyntaxError) as info:
            expr.parse("   ", 1)
        assert info.value.offset == 0

    def test_unexpected_character(self):
        with pytest.raises(ExprSyntaxError) as info:
            expr.parse("x1 $ 2", 1)
        assert info.value.offset == 3

    def test_arity(self):
        with pytest.raises(ArityError):
            expr.parse("x1; x1", 1)
        with pytest.raises(ArityError):
            expr.parse("x1", 2)

    def test_unknown_identifiers(self):
        with pytest.raises(UnknownIdentifier) as info:
            expr.parse("x1 + y", 1)
        assert info.value.name == "y" and info.value.offset == 5
        with pytest.raises(UnknownIdentifier):
            expr.parse("x3", 2)
        with pytest.raises(UnknownIdentifier):
            expr.parse("x0", 2)

    def test_precedence(self):
        # ^ > unaire - > * / > + -
        assert expr.parse("-x1^2", 1)[0] == Unary("neg", Binary("^", Variable(0), Constant(2.0)))
        assert expr.parse("1 + 2*x1", 1)[0] == Binary("+", Constant(1.0), Binary("*", Constant(2.0), Variable(0)))
        assert expr.parse("x1 - 1 - 2", 1)[0] == Binary("-", Binary("-", Variable(0), Constant(1.0)), Constant(2.0))

    def test_integer_exponents_only(self):
        with pytest.raises(ExprSyntaxError):
            expr.parse("x1^0.5", 1)
        with pytest.raises(ExprSyntaxError):
            expr.parse("x1^x1", 1)
        assert expr.parse("x1^-1", 1)[0] == Binary("^", Variable(0), Constant(-1.0))

    def test_chained_exponent_is_right_associative(self):
        assert expr.parse("x1^2^3", 1)[0] == Binary("^", Variable(0), Constant(8.0))

    def test_functions(self):
        node = expr.parse("exp(x1)*cos(x2); ln(sqrt(abs(x2)))", 2)
        assert node[0] == Binary("*", Unary("exp", Variable(0)), Unary("cos", Variable(1)))
        assert node[1] == Unary("ln", Unary("sqrt", Unary("abs", Variable(1))))

    def test_determinism(self):
        assert expr.parse("x1*x2 + 3; x2", 2) == expr.parse("x1*x2 + 3; x2", 2)


class TestPrint:
    SOURCES = [
        ("x1^2 - x2^2; 2*x1*x2", 2),
        ("exp(x1)*cos(x2); exp(x1)*sin(x2)", 2),
        ("-x1^2 + 1/(x1 - 3); abs(x2)^-2", 2),
        ("x1 + 0.5*sin(x1); x2 + 0.5*sin(x2)", 2),
        ("1.5e-3*x1^3 - -x1", 1),
    ]

    @pytest.mark.parametrize("src,dim", SOURCES)
    def test_reparse_gives_equal_ast(self, src, dim):
        nodes = expr.parse(src, dim)
        assert expr.parse(expr.components_to_source(nodes), dim) == nodes


class TestEvaluate:
    def test_values(self):
        assert expr.evaluate(expr.parse("x1^2 - x2^2", 2)[0], [3.0, 2.0]) == 5.0
        assert expr.evaluate(expr.parse("7", 1)[0], [123.0]) == 7.0
        assert expr.evaluate(expr.parse("-x1^2", 1)[0], [3.0]) == -9.0

    def test_pole(self):
        with pytest.raises(NonFinite):
            expr.evaluate(expr.parse("1/x1", 1)[0], [0.0])

    def test_forbidden_domains(self):
        with pytest.raises(NonFinite):
            expr.evaluate(expr.parse("ln(x1)", 1)[0], [0.0])
        with pytest.raises(NonFinite):
            expr.evaluate(expr.parse("sqrt(x1)", 1)[0], [-1.0])
        with pytest.raises(NonFinite):
            expr.evaluate(expr.parse("exp(x1)", 1)[0], [1000.0])

    def test_evaluate_all(self):
        values = expr.evaluate_all(expr.parse("x1 + x2; x1*x2", 2), [2.0, 3.0])
        np.testing.assert_array_equal(values, [5.0, 6.0])


class TestDual:
    def test_product_rule(self):
        x = expr.Dual.variable(3.0, 0, 2)
        y = expr.Dual.variable(2.0, 1, 2)
        z = x * y + x ** 2
        assert z.value == 15.0
        np.testing.assert_array_equal(z.grad, [8.0, 3.0])

    def test_quotient_and_chain(self):
        x = expr.Dual.variable(0.5, 0, 1)
        z = (1.0 / x).exp()
        assert z.value == pytest.approx(math.exp(2.0))
        assert z.grad[0] == pytest.approx(-math.exp(2.0) / 0.25)

    def test_abs_at_zero(self):
        with pytest.raises(NotDifferentiable):
            abs(expr.Dual.variable(0.0, 0, 1))

    def test_identity_jacobian(self):
        np.testing.assert_array_equal(expr.ad_jacobian(expr.parse("x1; x2; x3", 3), [1.0, -2.0, 5.0]), np.eye(3))

    def test_square_jacobian(self):
        jac = expr.ad_jacobian(expr.parse("x1^2 - x2^2; 2*x1*x2", 2), [1.5, -0.5])
        np.testing.assert_allclose(jac, [[3.0, 1.0], [-1.0, 3.0]])

    def test_abs_jacobian_at_zero(self):
        with pytest.raises(NotDifferentiable):
            expr.ad_jacobian(expr.parse("abs(x1)", 1), [0.0])

    def test_constant_component_has_zero_row(self):
        jac = expr.ad_jacobian(expr.parse("3; x1*x2", 2), [1.0, 2.0])
        np.testing.assert_array_equal(jac, [[0.0, 0.0], [2.0, 1.0]])
