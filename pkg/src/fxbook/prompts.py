"""Prompt templates for every teacher/student interaction.

table_choice, example_gen, and doc_qa are verbatim transcriptions of the
production prompts; parallel_solution, oracle_solution, and eval_task are
authored here following the same shape and are marked non-verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

PLACEHOLDER_NAMES = (
    "func",
    "docs",
    "tables",
    "table",
    "query",
    "function_docs",
    "signatures",
    "context",
)


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    verbatim: bool = True


TABLE_CHOICE_BODY = """## General Instruction:
You are a helpful assistant to a data scientist who is learning to use Excel. You are preparing a tutorial for the data scientist about a specific Excel function.

Below is an Excel function to be demonstrated. In order to demonstrate the function, we need to find a data table with information that is useful to query with the function.

Given the function, its documentation, and a list of tables, choose the table that would be the most interesting to use to demonstrate the function. The demonstration will need to show how the function can be used to query the table as well as how its arguments work.

## Output:
First write an explanation of how each table could be used to demonstrate the function.
Then, choose which table is best suited to demonstrate all the functionality of the function including its arguments.
Last, write the number of the table that you have chosen on its own line.

## Function:
{func}

## Documentation:
{docs}

## Tables:
{tables}
"""

EXAMPLE_GEN_BODY = """## General Instruction:
You are a helpful assistant to a data scientist who is learning to use Excel.

You are tasked with creating a tutorial of examples demonstrating the functionality of F, given F's reference documentation, as well as a random data table T taken from Wikipedia.
The tutorial should contain at least one example demonstrating each of F's argument slots, in order to thoroughly describe how F works.

## Task:
First, analyze the documentation of the function F to understand what each argument does. Write a brief explanation of what each argument is used for, including whether it is required or optional.
Format the explanation as markdown:

```markdown
Function: F
- arg1 <required>: explanation of arg1
- arg2 <required>: explanation of arg2
- arg3 <optional>: explanation of arg3
```

Second, write a series of examples demonstrating the use of F on the table T. Each example should contain:

1. The function F
2. The argument A being demonstrated
3. A natural language query Q which requires the use of F and A executed on the table T to compute a solution. Write the query in a natural and realistic way, as if an interested person were trying to analyze the data table to solve a problem.
Make the query specific so there is only one correct answer. For example, to demonstrate a string manipulation function, the query Q should specify exactly how to format the output string so that a program can be written to do this.
4. A brief explanation of what F does in general (not related to the query Q or table T).
5. A step by step explanation of how to use F and A to solve the query Q given T. When explaining the steps, only use values mentioned in the query Q or references into the table T. Use the syntax section of the function F's documentation to explain how the arguments are used.
6. The answer to the query Q. After any reasoning, restate the answer on its own line at the end, e.g. "True", "False", "5", etc.
7. The final Excel formula using F and A to solve the query Q
8. Write the parameter name and required/optional for each of the final arguments given to F as a list, e.g. "param1 <required>", "param2 <optional>", etc.

Write examples which demonstrate the required arguments, then examples for each of the optional arguments.
Format the examples as a JSON list according to the following structure:

```json
[
    {
        "func": str,
        "demo_argument": str <required/optional>,
        "query": str,
        "func_explanation": str,
        "step_by_step": [ str, ... ],
        "answer": str,
        "formula": str,
        "structure": [ str <required/optional>, ... ]
    },
    ...
]
```

For the Excel formula, use the following format:
"=FUNCTION(ARGUMENTS)"

## Function:
{func}

## Documentation:
{docs}

## Random Table:
In Excel tables, the first row is usually reserved for column headers. The first column is usually reserved for row headers. For example, the data starts in A2.
Larger tables may be excerpted here. If so, the first and last rows of the table will be shown, with an ellipsis (...) in between representing the hidden middle rows.
Remember that NaN values in Excel may be written in the table as "nan".

{table}

## Tutorial:
"""

DOC_QA_BODY = """In the following article about an Excel formula API, there is a section describing examples of using the API (each example formula looks like "=FORMULA(arguments)"). The section contains one or multiple tables containing the examples.

Task:
Extract all examples from the tables and format them like this:
1. First, copy the description of the example formula.
2. Next, if the formula contains contains a cell reference (e.g. A2), then copy the portion of the table containing the referred data (and not the example rows) so that the formula can be evaluated.
3. Then, copy the formula itself into a code block.
4. Last, copy the output of the formula below the code block.

If there are no examples present in the article, write "[No examples provided]".

Demonstration:

This article describes the formula syntax and usage of the ABS function in Microsoft Excel.

Description
Returns the absolute value of a number. The absolute value of a number is the number without its sign.

Syntax
ABS(number)
The ABS function syntax has the following arguments:
  - Number <Required>: The real number of which you want the absolute value.

Example
Copy the table below, and paste into cell A1 in Excel. You may need to select any cells that contain formulas and press F2 and then Enter to make the formulas work. You may also want to make the columns wider to make your worksheet easier to read.

|    | A        | B                    | C          |
|----|----------|----------------------|------------|
|  1 | Data     | Unnamed: 1           | Unnamed: 2 |
|  2 | -4       |                      |            |
|  3 | Formula  | Description          | Result     |
|  4 | =ABS(2)  | Absolute value of 2  | 2          |
|  5 | =ABS(-2) | Absolute value of -2 | 2          |
|  6 | =ABS(A2) | Absolute value of -4 | 4          |


See Also
Subtract numbers
Multiply and divide numbers in Excel
Calculate percentages


Expected output:

Absolute value of 2
```excel
=ABS(2)
```
>>> 2

-----

Absolute value of -2
```excel
=ABS(-2)
```
>>> 2

-----

|    | A        | B                    | C          |
|----|----------|----------------------|------------|
|  1 | Data     | Unnamed: 1           | Unnamed: 2 |
|  2 | -4       |                      |            |

Absolute value of -4
```excel
=ABS(A2)
```
>>> 4

-----

Now it's your turn! Please extract the examples from the following article:
{function_docs}
"""

EVAL_TASK_BODY = """## General Instruction:
You are a helpful assistant to a data scientist who is learning to use Excel.

Given a table of data and a user query, write a step-by-step explanation of how to use Excel to solve the query using the table. Produce a final Excel formula that can be executed to solve the query. Write the final formula in an ```excel code block.

{signatures}{context}## Table:
{table}

## Query:
{query}

## Reasoning:
"""

ORACLE_SOLUTION_BODY = EVAL_TASK_BODY

PARALLEL_SOLUTION_BODY = """## General Instruction:
You are a helpful assistant to a data scientist who is analyzing a data table in Python.

Given a table of data and a user query, write a step-by-step explanation of how to solve the query with Python. The table is loaded into a Pandas DataFrame named `df`, using the table's first row as the column headers. Remember that DataFrames are 0-indexed, whereas spreadsheet rows are 1-indexed. Produce a final Python code block that computes the answer: assign the answer to a variable named `result`, or leave it as the value of the last expression.

## Table:
{table}

## Query:
{query}

## Solution:
"""

TEMPLATES = {
    "table_choice": PromptTemplate("table_choice", TABLE_CHOICE_BODY, verbatim=True),
    "example_gen": PromptTemplate("example_gen", EXAMPLE_GEN_BODY, verbatim=True),
    "doc_qa": PromptTemplate("doc_qa", DOC_QA_BODY, verbatim=True),
    "parallel_solution": PromptTemplate("parallel_solution", PARALLEL_SOLUTION_BODY, verbatim=False),
    "oracle_solution": PromptTemplate("oracle_solution", ORACLE_SOLUTION_BODY, verbatim=False),
    "eval_task": PromptTemplate("eval_task", EVAL_TASK_BODY, verbatim=False),
}
