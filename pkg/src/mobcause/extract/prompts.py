"""The five-step dialog used to turn a news article into an event record."""

SYSTEM = ("You are an AI that notifies affected users and makes suggestions to change "
          "their mobility based on news text.")

PUBLIC_EVENTS = (
    "First, identify the most influential events in the news content, including "
    "scheduled and unpredictable events.")

TIME_INFORMATION = (
    'Next, estimate the exact time of the most important event mentioned in the news in '
    'the following JSON format: "event time": "yyyy-mm-dd hh:mm:ss". If the exact time '
    "is unknown, use the news release time. Provide only the JSON string without any "
    "additional text or explanations.")

THREE_W_ONE_H = (
    "Based on the news text and our chat, evaluate the 3W1H related to human mobility.\n"
    "- Where: Where should people move if necessary?\n"
    "- Who: What kind of people will be affected?\n"
    "- When: When did the event happen?\n"
    "- How: How should people move if necessary?")

PREDICTABILITY = (
    "Is the content in the news more like an unpredictable event, such as an earthquake? "
    'Your answer can only be "Yes" or "No".')

HUMAN_INTENTIONS = (
    "Background: Most news related to economic, politics, culture, and history issues "
    "usually have no effect on human mobility because they do not relate to people's daily "
    "life.\n"
    "- Slight disasters, such as light earthquakes and tsunamis, or some local events (like "
    "political events) may also have no effect on human mobility in Japan.\n"
    "- Only events that happened close to the release time (within several hours) may have "
    "an influence on human mobility.\n"
    "Task: Score the news text based on the following aspects (0-100, where a higher number "
    "means higher agreement):\n"
    "Q1. To what extent do the events described in the news make people leave the area "
    "because they are dangerous?\n"
    "Q2. To what extent do the events described in the news make people stay in the area "
    "because it is better not to move?\n"
    "Q3. To what extent do the events described in the news make people visit the area "
    "because they are interesting events?\n"
    "Q4. To what extent do the events described in the news make people keep their daily "
    "routine as these events are not important to daily life?\n"
    "Q5. To what extent do the events described in the news lead to interruption of "
    "economic activities, such as business closures or work stoppages?\n"
    "Q6. To what extent do the events described in the news affect transportation "
    "conditions, such as traffic congestion or road closures?\n"
    "Q7. To what extent do the events described in the news impact public health and "
    "safety, leading to decisions to leave or avoid certain areas?\n"
    "Q8. To what extent do the events described in the news involve government or official "
    "instructions that influence people's movements?\n"
    "Q9. To what extent do the events described in the news affect the availability of "
    "public services, such as school closures or interruptions in medical services?\n"
    "Q10. To what extent do the events described in the news last a long time (like one "
    "day)?\n"
    "Expected response: A list of 10 numbers between 0 and 100.")

STEPS = (PUBLIC_EVENTS, TIME_INFORMATION, THREE_W_ONE_H, PREDICTABILITY, HUMAN_INTENTIONS)


def first_user_message(article_text: str, release_time: str) -> str:
    return (f"{PUBLIC_EVENTS}\n\nNews release time: {release_time}\n"
            f"News text:\n{article_text}")
