import json
import re

import httpx
import pytest

from provoscope.dataset import load_csv
from provoscope.factors import Factor, Importance
from provoscope.filter_dsl import Cmp
from provoscope.gateway import (
    LlmRequest,
    NotJson,
    ProviderConfig,
    ProviderError,
    RateLimited,
    SchemaError,
    Timeout,
    UnusableAnalysis,
    complete,
    generate_factors,
    generate_filter_with_fallback,
    parse_analysis_response,
    parse_factor_response,
    serialize_factor_drafts,
)
from provoscope.prompts import (
    EmptyCriteria,
    EmptyQuery,
    build_analysis_prompt,
    build_factor_prompt,
    serialize_rows,
)


def dataset_of(n_rows, headers=("Title", "Rating")):
    lines = [",".join(headers)]
    lines += [f"movie {i},{i % 10}" for i in range(n_rows)]
    return load_csv("\n".join(lines).encode(), f"d{n_rows}")


def embedded_row_ids(prompt):
    return [int(m.group(1)) for m in re.finditer(r"^(\d+)\|", prompt, re.M)]


def factor_fixture(n=3, **overrides):
    items = []
    for i in range(n):
        item = {
            "name": f"Factor {i}",
            "source_columns": ["Rating"],
            "criteria": f"criteria {i}",
            "importance": "Medium",
            "risk": f"risk {i}",
        }
        item.update(overrides)
        items.append(item)
    return "```json\n" + json.dumps(items) + "\n```"


class RecordingSend:
    """Scripted send: pops canned responses, remembers every request."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests: list[LlmRequest] = []

    def __call__(self, request):
        self.requests.append(request)
        return self.responses.pop(0)


class TestFactorPrompt:
    def test_contains_risk_instruction_literal(self):
        prompt = build_factor_prompt("anything", dataset_of(3))
        assert "The risk of using such criteria" in prompt

    def test_small_dataset_fully_embedded(self):
        prompt = build_factor_prompt("q", dataset_of(10))
        assert embedded_row_ids(prompt) == list(range(10))

    def test_large_dataset_clamped_to_first_40(self):
        prompt = build_factor_prompt("q", dataset_of(100))
        assert embedded_row_ids(prompt) == list(range(40))

    def test_empty_query(self):
        with pytest.raises(EmptyQuery):
            build_factor_prompt("   ", dataset_of(1))

    def test_deterministic(self):
        d = dataset_of(7)
        assert build_factor_prompt("q", d) == build_factor_prompt("q", d)

    def test_long_cells_clipped(self):
        d = load_csv(("t\n" + "x" * 500 + "\n").encode(), "long")
        prompt = build_factor_prompt("q", d)
        assert "x" * 121 not in prompt
        assert "…" in prompt


class TestAnalysisPrompt:
    def test_contains_message_instruction_literal(self):
        prompt = build_analysis_prompt("cheap", dataset_of(3))
        assert 'A "message" containing any warnings' in prompt

    def test_three_rows_embedded(self):
        assert embedded_row_ids(build_analysis_prompt("c", dataset_of(3))) == [0, 1, 2]

    def test_fifty_rows_clamped_to_first_5(self):
        prompt = build_analysis_prompt("c", dataset_of(50))
        assert embedded_row_ids(prompt) == [0, 1, 2, 3, 4]

    def test_grammar_embedded(self):
        prompt = build_analysis_prompt("c", dataset_of(3))
        assert '"startswith"' in prompt and '"missing"' in prompt

    def test_empty_criteria(self):
        with pytest.raises(EmptyCriteria):
            build_analysis_prompt(" ", dataset_of(1))


class TestSerializeRows:
    def test_header_then_rows(self):
        text = serialize_rows(dataset_of(2), 5)
        lines = text.splitlines()
        assert lines[0] == "id_|Title|Rating"
        assert lines[1].startswith("0|movie 0|")


class TestParseFactorResponse:
    HEADERS = ("Title", "Rating")

    def test_three_valid_factors_mapped_one_to_one(self):
        drafts, warnings = parse_factor_response(factor_fixture(3), self.HEADERS)
        assert warnings == []
        assert [d.title for d in drafts] == ["Factor 0", "Factor 1", "Factor 2"]
        assert drafts[0].provocation == "risk 0"
        assert drafts[0].importance is Importance.MEDIUM
        assert drafts[0].source_columns == ["Rating"]

    def test_missing_risk_is_schema_error(self):
        items = json.loads(re.sub(r"```\w*", "", factor_fixture(2)).replace("```", ""))
        del items[1]["risk"]
        with pytest.raises(SchemaError) as err:
            parse_factor_response(json.dumps(items), self.HEADERS)
        assert err.value.field == "risk"

    def test_seven_factors_truncated_to_five(self):
        drafts, _ = parse_factor_response(factor_fixture(7), self.HEADERS)
        assert len(drafts) == 5

    def test_unknown_source_columns_dropped_with_warning(self):
        raw = factor_fixture(1, source_columns=["Rating", "Budget"])
        drafts, warnings = parse_factor_response(raw, self.HEADERS)
        assert drafts[0].source_columns == ["Rating"]
        assert len(warnings) == 1 and "Budget" in warnings[0]

    def test_all_columns_unknown_leaves_empty_list(self):
        raw = factor_fixture(1, source_columns=["Budget"])
        drafts, _ = parse_factor_response(raw, self.HEADERS)
        assert drafts[0].source_columns == []

    def test_not_json(self):
        with pytest.raises(NotJson):
            parse_factor_response("no fence, no json", self.HEADERS)

    def test_empty_array_rejected(self):
        with pytest.raises(SchemaError):
            parse_factor_response("[]", self.HEADERS)

    def test_factors_wrapper_object_accepted(self):
        raw = '{"factors": ' + json.dumps(json.loads(_unfence(factor_fixture(2)))) + "}"
        drafts, _ = parse_factor_response(raw, self.HEADERS)
        assert len(drafts) == 2

    def test_serialize_then_parse_is_identity(self):
        drafts, _ = parse_factor_response(factor_fixture(4), self.HEADERS)
        again, warnings = parse_factor_response(
            serialize_factor_drafts(drafts), self.HEADERS
        )
        assert warnings == []
        assert [
            (d.title, d.source_columns, d.criteria, d.importance, d.provocation)
            for d in drafts
        ] == [
            (d.title, d.source_columns, d.criteria, d.importance, d.provocation)
            for d in again
        ]


def _unfence(raw):
    return re.sub(r"```\w*", "", raw).replace("```", "")


class TestComplete:
    def make_cfg(self, **kwargs):
        kwargs.setdefault("base_url", "http://provider.test/v1")
        kwargs.setdefault("retry_backoff", 0.0)
        return ProviderConfig(**kwargs)

    @staticmethod
    def ok_response(content):
        return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})

    def test_pass_through_byte_identical(self):
        fixture = "exact ☃ content\nwith lines"
        transport = httpx.MockTransport(lambda req: self.ok_response(fixture))
        assert complete(self.make_cfg(), "hi", transport=transport) == fixture

    def test_posts_openai_chat_shape_with_bearer(self, monkeypatch):
        monkeypatch.setenv("PROVOSCOPE_API_KEY", "sk-test")
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["auth"] = request.headers.get("authorization")
            seen["payload"] = json.loads(request.content)
            return self.ok_response("ok")

        complete(self.make_cfg(model="m1"), "prompt!", transport=httpx.MockTransport(handler))
        assert seen["url"] == "http://provider.test/v1/chat/completions"
        assert seen["auth"] == "Bearer sk-test"
        assert seen["payload"]["model"] == "m1"
        assert seen["payload"]["messages"] == [{"role": "user", "content": "prompt!"}]
        assert seen["payload"]["temperature"] == 0.0

    def test_two_500s_with_one_retry_is_provider_error(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(500, text="boom")

        with pytest.raises(ProviderError) as err:
            complete(self.make_cfg(max_retries=1), "p", transport=httpx.MockTransport(handler))
        assert calls["n"] == 2
        assert err.value.status == 500

    def test_retry_recovers_from_single_500(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] == 1:
                return httpx.Response(500, text="boom")
            return self.ok_response("recovered")

        got = complete(self.make_cfg(max_retries=1), "p", transport=httpx.MockTransport(handler))
        assert got == "recovered"

    def test_silence_raises_timeout(self):
        def handler(request):
            raise httpx.ReadTimeout("90s of silence")

        with pytest.raises(Timeout):
            complete(self.make_cfg(max_retries=3), "p", transport=httpx.MockTransport(handler))

    def test_rate_limited(self):
        transport = httpx.MockTransport(lambda req: httpx.Response(429, text="slow down"))
        with pytest.raises(RateLimited):
            complete(self.make_cfg(max_retries=1), "p", transport=transport)

    def test_4xx_not_retried(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(400, text="bad request")

        with pytest.raises(ProviderError):
            complete(self.make_cfg(max_retries=2), "p", transport=httpx.MockTransport(handler))
        assert calls["n"] == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ProviderConfig(temperature=3.0)
        with pytest.raises(ValueError):
            ProviderConfig(timeout=0)


class TestGenerateFactors:
    def test_joint_mode_is_one_call_and_provocations_present(self):
        send = RecordingSend([factor_fixture(4)])
        drafts, _ = generate_factors("bad movies", dataset_of(6), ProviderConfig(), send)
        assert len(send.requests) == 1
        assert send.requests[0].kind == "factors"
        assert len(drafts) == 4
        assert all(d.provocation.strip() for d in drafts)

    def test_separate_mode_issues_second_call_and_replaces_risks(self):
        risks = "```json\n" + json.dumps(
            [{"name": "Factor 0", "risk": "sharper risk"}]
        ) + "\n```"
        send = RecordingSend([factor_fixture(1), risks])
        cfg = ProviderConfig(joint_provocations=False)
        drafts, _ = generate_factors("q", dataset_of(6), cfg, send)
        assert len(send.requests) == 2
        assert drafts[0].provocation == "sharper risk"

    def test_request_carries_cache_identity(self):
        send = RecordingSend([factor_fixture(1)])
        generate_factors("q", dataset_of(6), ProviderConfig(model="m9"), send)
        request = send.requests[0]
        assert request.model == "m9"
        assert request.template_version
        assert len(request.dataset_fingerprint) == 64


class TestAnalysisProtocol:
    def analysis_fixture(self, filter_text, per_row=(), message="all good"):
        body = {
            "filter": filter_text,
            "per_row": [{"id_": i, "reason": f"r{i}"} for i in per_row],
            "message": message,
        }
        return "```json\n" + json.dumps(body) + "\n```"

    def make_factor(self):
        return Factor(id="f1", title="T", source_columns=["Rating"], criteria="low ratings")

    def test_valid_filter_used_directly(self):
        send = RecordingSend([self.analysis_fixture("Rating <= 4.0", per_row=[1])])
        outcome = generate_filter_with_fallback(
            self.make_factor(), dataset_of(6), ProviderConfig(), send
        )
        assert outcome.filter == Cmp("Rating", "<=", 4.0)
        assert outcome.per_row_reasons == {1: "r1"}
        assert not outcome.retried and not outcome.degraded
        assert len(send.requests) == 1

    def test_retry_with_error_appended_then_valid(self):
        send = RecordingSend(
            [
                self.analysis_fixture("and and"),
                self.analysis_fixture("Rating >= 7.0"),
            ]
        )
        outcome = generate_filter_with_fallback(
            self.make_factor(), dataset_of(6), ProviderConfig(), send
        )
        assert outcome.filter == Cmp("Rating", ">=", 7.0)
        assert outcome.retried
        assert "retry" in outcome.message
        assert len(send.requests) == 2
        assert "could not be used" in send.requests[1].prompt

    def test_unknown_column_filter_triggers_retry(self):
        send = RecordingSend(
            [
                self.analysis_fixture("Budget > 1"),
                self.analysis_fixture("Rating > 1"),
            ]
        )
        outcome = generate_filter_with_fallback(
            self.make_factor(), dataset_of(6), ProviderConfig(), send
        )
        assert outcome.filter == Cmp("Rating", ">", 1.0)
        assert "Budget" in send.requests[1].prompt

    def test_degraded_mode_uses_explicit_row_list(self):
        send = RecordingSend(
            [
                self.analysis_fixture("not a filter ((("),
                self.analysis_fixture("still bad (((", per_row=[3, 1]),
            ]
        )
        outcome = generate_filter_with_fallback(
            self.make_factor(), dataset_of(6), ProviderConfig(), send
        )
        assert outcome.filter is None
        assert outcome.degraded
        assert outcome.row_ids == [1, 3]
        assert "Degraded mode" in outcome.message

    def test_unusable_after_both_paths(self):
        send = RecordingSend(["garbage", "more garbage"])
        with pytest.raises(UnusableAnalysis):
            generate_filter_with_fallback(
                self.make_factor(), dataset_of(6), ProviderConfig(), send
            )

    def test_parse_analysis_response_shapes(self):
        parsed = parse_analysis_response(self.analysis_fixture("Rating > 1", per_row=[0, 2]))
        assert parsed.filter_text == "Rating > 1"
        assert parsed.per_row == {0: "r0", 2: "r2"}
        assert parsed.message == "all good"
        with pytest.raises(NotJson):
            parse_analysis_response("not json at all")
        with pytest.raises(SchemaError):
            parse_analysis_response('{"per_row": [{"reason": "no id"}]}')
